//! Small unconstrained optimisation toolkit: Nelder-Mead, BFGS with a
//! backtracking line search, golden-section search, bisection and finite
//! difference helpers. Everything minimises; callers negate log-likelihoods.

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the gradient at `x` (NaN when no gradient was used).
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    pub initial_step: f64,
    pub ftol: f64,
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            initial_step: 0.5,
            ftol: 1e-10,
            xtol: 1e-8,
        }
    }
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        let value = f(x0);
        return Minimum {
            x: Vec::new(),
            value,
            iterations: 0,
            converged: true,
            grad_norm: f64::NAN,
        };
    }
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step * x0[i].abs().max(1.0);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| finite_or_inf(f(v))).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.is_finite()
            && spread <= opts.ftol * (values[0].abs() + opts.ftol)
            && size <= opts.xtol * (1.0 + simplex[0].iter().fold(0.0f64, |m, v| m.max(v.abs())))
        {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = along(-1.0);
        let fr = finite_or_inf(f(&reflected));
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = finite_or_inf(f(&expanded));
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(-0.5);
            let fc = finite_or_inf(f(&c));
            (c, fc)
        } else {
            let c = along(0.5);
            let fc = finite_or_inf(f(&c));
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(v, b)| b + 0.5 * (v - b))
                .collect();
            values[i] = finite_or_inf(f(&shrunk));
            simplex[i] = shrunk;
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        converged,
        grad_norm: f64::NAN,
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when `|g|_inf <= gtol * (1 + |f|)`.
    pub gtol: f64,
    /// Looser gradient bound accepted when the line search can no longer
    /// make progress (finite-difference noise floor).
    pub stall_gtol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-8,
            stall_gtol: 1e-5,
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn bfgs<F, G>(mut f: F, mut grad: G, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64], &mut [f64]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = finite_or_inf(f(&x));
    let mut g = vec![0.0; n];
    grad(&x, &mut g);
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;

    let mut p = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    // consecutive accepted steps whose decrease is lost in rounding
    let mut flat_steps = 0;

    while iterations < opts.max_iter {
        let gn = inf_norm(&g);
        if !gn.is_finite() {
            break;
        }
        if gn <= opts.gtol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        for i in 0..n {
            p[i] = -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&g, &p);
        if slope >= 0.0 || !slope.is_finite() {
            h = identity(n);
            fresh = true;
            for i in 0..n {
                p[i] = -g[i];
            }
            slope = dot(&g, &p);
        }

        let mut t = if fresh { (1.0 / gn).min(1.0) } else { 1.0 };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + t * p[i];
            }
            let f_new = finite_or_inf(f(&x_new));
            if f_new <= fx + 1e-4 * t * slope {
                accepted = true;
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                grad(&x_new, &mut g_new);
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                let yy = dot(&y, &y);
                if sy > 1e-14 * dot(&s, &s).sqrt() * yy.sqrt() && sy.is_finite() {
                    if fresh {
                        let scale = sy / yy;
                        h.iter_mut().for_each(|v| *v *= scale);
                        fresh = false;
                    }
                    bfgs_update(&mut h, &s, &y, sy);
                }
                if fx - f_new <= 1e-13 * (1.0 + fx.abs()) {
                    flat_steps += 1;
                } else {
                    flat_steps = 0;
                }
                x.copy_from_slice(&x_new);
                g.copy_from_slice(&g_new);
                fx = f_new;
                break;
            }
            t *= 0.5;
        }
        if flat_steps >= 10 {
            converged = inf_norm(&g) <= opts.stall_gtol * (1.0 + fx.abs());
            break;
        }
        if !accepted {
            if !fresh {
                h = identity(n);
                fresh = true;
                continue;
            }
            converged = inf_norm(&g) <= opts.stall_gtol * (1.0 + fx.abs());
            break;
        }
    }
    Minimum {
        grad_norm: inf_norm(&g),
        x,
        value: fx,
        iterations,
        converged,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
        .collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Central-difference gradient.
pub fn numerical_gradient<F>(mut f: F, x: &[f64], out: &mut [f64])
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        out[i] = (fp - fm) / (2.0 * h);
    }
}

/// Hessian by differencing an analytic gradient. Coordinates that would
/// cross their lower bound use a forward difference instead.
pub fn hessian_from_gradient<G>(
    mut grad: G,
    x: &[f64],
    steps: &[f64],
    lower: &[Option<f64>],
) -> Vec<Vec<f64>>
where
    G: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut hess = vec![vec![0.0; n]; n];
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = steps[j];
        let forward = lower[j].is_some_and(|lb| x[j] - h < lb);
        xp[j] = x[j] + h;
        grad(&xp, &mut gp);
        if forward {
            xp[j] = x[j];
            grad(&xp, &mut gm);
            for i in 0..n {
                hess[i][j] = (gp[i] - gm[i]) / h;
            }
        } else {
            xp[j] = x[j] - h;
            grad(&xp, &mut gm);
            for i in 0..n {
                hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        xp[j] = x[j];
    }
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (hess[i][j] + hess[j][i]);
            hess[i][j] = avg;
            hess[j][i] = avg;
        }
    }
    hess
}

/// Golden-section search for the maximiser of a unimodal `f` on `[lo, hi]`.
/// Returns `(argmax, max)`.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    // the endpoints are candidates too: the maximiser may sit on the boundary
    let mid = 0.5 * (a + b);
    let fm = f(mid);
    let flo = f(lo);
    let fhi = f(hi);
    [(mid, fm), (lo, flo), (hi, fhi)]
        .into_iter()
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((mid, fm))
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || (hi - lo).abs() <= tol {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
