//! Negative-binomial tensor-product P-spline smoother for contact counts.
//!
//! Observations are (participant, contact band) counts. All participants of
//! a respondent band share the same linear predictor in every contact band,
//! so the weighted likelihood and the IRLS normal equations only need the
//! cell sums `Σ w` and `Σ w y` plus a weighted histogram of the counts.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::bspline::SplineBasis;
use super::{CountTable, SocialContactMatrix};
use crate::data::AgeGrid;
use crate::error::{Error, Result};
use crate::optim::golden_section_max;

/// Range the dispersion parameter is searched over.
pub const DISPERSION_BOUNDS: (f64, f64) = (1e-2, 1e3);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    /// Grid search on conditional AIC.
    Select,
    Fixed([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionChoice {
    /// Profile maximisation alternated with the coefficient fit.
    Estimate,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingSettings {
    pub basis_dim: usize,
    pub lambda: LambdaChoice,
    pub dispersion: DispersionChoice,
    pub lambda_grid: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    /// Alternations between the dispersion and the coefficients.
    pub max_rounds: usize,
}

impl Default for SmoothingSettings {
    fn default() -> Self {
        SmoothingSettings {
            basis_dim: 11,
            lambda: LambdaChoice::Select,
            dispersion: DispersionChoice::Estimate,
            lambda_grid: (-2..=5).map(|e| 10f64.powi(e)).collect(),
            max_iter: 200,
            tol: 1e-8,
            max_rounds: 5,
        }
    }
}

impl SmoothingSettings {
    /// Settings that reuse the smoothing parameters and dispersion of an
    /// earlier fit instead of selecting them again.
    pub fn fixed_from(surface: &SmoothSurface) -> Self {
        SmoothingSettings {
            basis_dim: surface.basis.dim,
            lambda: LambdaChoice::Fixed(surface.smoothing),
            dispersion: DispersionChoice::Fixed(surface.dispersion),
            ..Default::default()
        }
    }
}

/// A fitted log-mean contact surface `log m(a, a')` with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothSurface {
    /// Shared marginal basis for respondent and contact age.
    pub basis: SplineBasis,
    pub intercept: f64,
    /// Centred tensor coefficients, row-major (respondent, contact); they
    /// sum to zero.
    pub coefficients: Vec<f64>,
    pub dispersion: f64,
    pub dispersion_capped: bool,
    pub smoothing: [f64; 2],
    pub edf: f64,
    pub loglik: f64,
    pub deviance: f64,
    /// Conditional AIC, `-2 loglik + 2 edf`.
    pub aic: f64,
    pub iterations: usize,
    /// Max-norm of the penalised score per unit of total diary weight.
    pub gradient_norm: f64,
}

impl SmoothSurface {
    /// `log m` at respondent age `a` and contact age `b`.
    pub fn log_mean(&self, a: f64, b: f64) -> Result<f64> {
        for x in [a, b] {
            if !self.basis.contains(x) {
                return Err(Error::AgeOutOfRange {
                    age: x,
                    min: self.basis.lower,
                    max: self.basis.upper,
                });
            }
        }
        let k = self.basis.dim;
        let (sa, va) = self.basis.eval(a);
        let (sb, vb) = self.basis.eval(b);
        let mut eta = self.intercept;
        for u in 0..4 {
            for v in 0..4 {
                eta += va[u] * vb[v] * self.coefficients[(sa + u) * k + sb + v];
            }
        }
        Ok(eta)
    }
}

/// Fitted means at the midpoints of one-year bands `0..n_bands`.
pub fn evaluate_surface(surface: &SmoothSurface, n_bands: usize) -> Result<SocialContactMatrix> {
    let grid = AgeGrid::one_year(0, n_bands as u32)?;
    let mids = grid.midpoints();
    let mut m = DMatrix::zeros(n_bands, n_bands);
    for (i, &a) in mids.iter().enumerate() {
        for (j, &b) in mids.iter().enumerate() {
            m[(i, j)] = surface.log_mean(a, b)?.exp();
        }
    }
    Ok(SocialContactMatrix { grid, m })
}

struct Stats {
    n: usize,
    wp: Vec<f64>,
    yp: Vec<f64>,
    hist: Vec<f64>,
    total: f64,
}

impl Stats {
    fn new(table: &CountTable) -> Result<Self> {
        let n = table.n_bands;
        let mut wp = vec![0.0; n];
        let mut yp = vec![0.0; n * n];
        let mut hist: Vec<f64> = Vec::new();
        for row in &table.rows {
            if row.weight < 0.0 || !row.weight.is_finite() {
                return Err(Error::InvalidInput(format!("bad diary weight {}", row.weight)));
            }
            wp[row.band] += row.weight;
            for (c, &y) in row.counts.iter().enumerate() {
                yp[row.band * n + c] += row.weight * y as f64;
                let y = y as usize;
                if hist.len() <= y {
                    hist.resize(y + 1, 0.0);
                }
                hist[y] += row.weight;
            }
        }
        if table.rows.is_empty() || wp.iter().sum::<f64>() <= 0.0 {
            return Err(Error::EmptyDataset("no weighted participants to smooth".into()));
        }
        if yp.iter().all(|&y| y == 0.0) {
            return Err(Error::EmptyDataset("all contact counts are zero".into()));
        }
        let total = hist.iter().sum();
        Ok(Stats { n, wp, yp, hist, total })
    }

    fn loglik(&self, eta: &[f64], k: f64) -> f64 {
        let lk = ln_gamma(k);
        let mut ll = -self.total * lk;
        for (y, &h) in self.hist.iter().enumerate() {
            if h > 0.0 {
                ll += h * (ln_gamma(y as f64 + k) - ln_gamma(y as f64 + 1.0));
            }
        }
        let klk = k * k.ln();
        for r in 0..self.n {
            let w = self.wp[r];
            if w == 0.0 {
                continue;
            }
            for c in 0..self.n {
                let e = eta[r * self.n + c];
                let y = self.yp[r * self.n + c];
                ll += w * klk - (w * k + y) * (k + e.exp()).ln() + y * e;
            }
        }
        ll
    }

    fn deviance(&self, eta: &[f64], k: f64) -> f64 {
        let mut d = 0.0;
        for (y, &h) in self.hist.iter().enumerate() {
            let y = y as f64;
            let ylny = if y > 0.0 { y * y.ln() } else { 0.0 };
            d += h * (ylny - (y + k) * (y + k).ln());
        }
        for r in 0..self.n {
            let w = self.wp[r];
            if w == 0.0 {
                continue;
            }
            for c in 0..self.n {
                let e = eta[r * self.n + c];
                let y = self.yp[r * self.n + c];
                d += (y + w * k) * (k + e.exp()).ln() - y * e;
            }
        }
        2.0 * d
    }
}

struct Design {
    dim: usize,
    starts: Vec<usize>,
    values: Vec<[f64; 4]>,
}

impl Design {
    fn new(basis: &SplineBasis, n: usize) -> Self {
        let (starts, values) = (0..n).map(|i| basis.eval(i as f64 + 0.5)).unzip();
        Design {
            dim: basis.dim,
            starts,
            values,
        }
    }

    fn n(&self) -> usize {
        self.starts.len()
    }

    fn eta(&self, coef: &[f64]) -> Vec<f64> {
        let n = self.n();
        let k = self.dim;
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            let (sr, br) = (self.starts[r], self.values[r]);
            for c in 0..n {
                let (sc, bc) = (self.starts[c], self.values[c]);
                let mut e = 0.0;
                for u in 0..4 {
                    let row = &coef[(sr + u) * k + sc..(sr + u) * k + sc + 4];
                    e += br[u] * (bc[0] * row[0] + bc[1] * row[1] + bc[2] * row[2] + bc[3] * row[3]);
                }
                out[r * n + c] = e;
            }
        }
        out
    }

    /// `X'WX` and `X'Wz` of the Fisher-scoring step, plus the score `X'(∂ℓ/∂η)`.
    fn normal_equations(&self, stats: &Stats, eta: &[f64], k: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n();
        let kd = self.dim;
        let p = kd * kd;
        let mut xtwx = vec![0.0; p * p];
        let mut xtwz = vec![0.0; p];
        let mut score = vec![0.0; p];
        let mut idx = [0usize; 16];
        let mut x = [0.0f64; 16];
        for r in 0..n {
            let w = stats.wp[r];
            if w == 0.0 {
                continue;
            }
            let (sr, br) = (self.starts[r], self.values[r]);
            for c in 0..n {
                let (sc, bc) = (self.starts[c], self.values[c]);
                let e = eta[r * n + c];
                let m = e.exp();
                let shrink = k / (k + m);
                let a = w * m * shrink;
                let s = (stats.yp[r * n + c] - w * m) * shrink;
                let z = a * e + s;
                for u in 0..4 {
                    for v in 0..4 {
                        idx[u * 4 + v] = (sr + u) * kd + sc + v;
                        x[u * 4 + v] = br[u] * bc[v];
                    }
                }
                for q in 0..16 {
                    xtwz[idx[q]] += z * x[q];
                    score[idx[q]] += s * x[q];
                    let ax = a * x[q];
                    let row = idx[q] * p;
                    for t in 0..16 {
                        xtwx[row + idx[t]] += ax * x[t];
                    }
                }
            }
        }
        (xtwx, xtwz, score)
    }
}

fn penalty_matrix(basis: &SplineBasis, lambdas: [f64; 2]) -> DMatrix<f64> {
    let k = basis.dim;
    let pm = basis.penalty();
    let p = k * k;
    let mut s = DMatrix::zeros(p, p);
    for l in 0..k {
        for l2 in 0..k {
            for q in 0..k {
                // respondent-margin roughness
                s[(l * k + q, l2 * k + q)] += lambdas[0] * pm[l * k + l2];
                // contact-margin roughness
                s[(q * k + l, q * k + l2)] += lambdas[1] * pm[l * k + l2];
            }
        }
    }
    s
}

fn quad_form(s: &DMatrix<f64>, v: &[f64]) -> f64 {
    let p = v.len();
    let mut q = 0.0;
    for j in 0..p {
        if v[j] == 0.0 {
            continue;
        }
        let col = s.column(j);
        let mut acc = 0.0;
        for i in 0..p {
            acc += col[i] * v[i];
        }
        q += acc * v[j];
    }
    q
}

fn penalized_score_norm(score: &[f64], s: &DMatrix<f64>, coef: &[f64]) -> f64 {
    let sd = s * nalgebra::DVector::from_column_slice(coef);
    score
        .iter()
        .zip(sd.iter())
        .map(|(g, q)| (g - q).abs())
        .fold(0.0, f64::max)
}

struct IrlsFit {
    coef: Vec<f64>,
    eta: Vec<f64>,
    loglik: f64,
    edf: f64,
    iterations: usize,
    gradient_norm: f64,
}

fn irls(
    stats: &Stats,
    design: &Design,
    s: &DMatrix<f64>,
    k: f64,
    start: &[f64],
    settings: &SmoothingSettings,
) -> Result<IrlsFit> {
    let p = start.len();
    let mut coef = start.to_vec();
    let mut eta = design.eta(&coef);
    let mut obj = stats.loglik(&eta, k) - 0.5 * quad_form(s, &coef);
    if !obj.is_finite() {
        return Err(Error::IrlsFailure {
            reason: "non-finite objective at the starting values".into(),
            trace: vec![],
        });
    }
    let mut trace = vec![-2.0 * obj];
    let weight: f64 = stats.wp.iter().sum::<f64>().max(1.0);
    let converged;
    let mut small_change = false;
    let mut iterations = 0;
    loop {
        let (xtwx, xtwz, score) = design.normal_equations(stats, &eta, k);
        // Fisher scoring converges linearly here, so a small deviance change
        // alone can leave a visible score; ask for both
        if small_change && penalized_score_norm(&score, s, &coef) / weight < 1e-8 {
            converged = true;
            break;
        }
        if iterations == settings.max_iter {
            converged = small_change;
            break;
        }
        iterations += 1;
        let lhs = DMatrix::from_vec(p, p, xtwx) + s;
        let chol = lhs.cholesky().ok_or_else(|| Error::IrlsFailure {
            reason: "penalised information matrix is not positive definite".into(),
            trace: trace.clone(),
        })?;
        let target = chol.solve(&nalgebra::DVector::from_vec(xtwz));

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = coef
                .iter()
                .zip(target.iter())
                .map(|(c, n)| c + t * (n - c))
                .collect();
            let eta_c = design.eta(&cand);
            let obj_c = stats.loglik(&eta_c, k) - 0.5 * quad_form(s, &cand);
            if obj_c.is_finite() && obj_c >= obj - 1e-12 * obj.abs() {
                accepted = Some((cand, eta_c, obj_c));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, eta_c, obj_c)) = accepted else {
            return Err(Error::IrlsFailure {
                reason: "step halving could not improve the penalised likelihood".into(),
                trace,
            });
        };
        let change = (obj_c - obj).abs() / (obj_c.abs() + 0.1);
        coef = cand;
        eta = eta_c;
        obj = obj_c;
        trace.push(-2.0 * obj);
        small_change = change < settings.tol;
    }
    if !converged {
        return Err(Error::IrlsFailure {
            reason: format!("no convergence after {} iterations", settings.max_iter),
            trace,
        });
    }

    let (xtwx, _, score) = design.normal_equations(stats, &eta, k);
    let info = DMatrix::from_vec(p, p, xtwx);
    let lhs = &info + s;
    let chol = lhs.cholesky().ok_or_else(|| Error::IrlsFailure {
        reason: "penalised information matrix is not positive definite".into(),
        trace: trace.clone(),
    })?;
    let solved = chol.solve(&info);
    let edf = solved.trace();
    let gradient_norm = penalized_score_norm(&score, s, &coef) / weight;
    Ok(IrlsFit {
        loglik: stats.loglik(&eta, k),
        coef,
        eta,
        edf,
        iterations,
        gradient_norm,
    })
}

fn profile_dispersion(stats: &Stats, eta: &[f64]) -> (f64, bool) {
    let (lo, hi) = (DISPERSION_BOUNDS.0.ln(), DISPERSION_BOUNDS.1.ln());
    let (lk, _) = golden_section_max(|lk| stats.loglik(eta, lk.exp()), lo, hi, 1e-6);
    let capped = (lk - hi).abs() < 1e-4 || (lk - lo).abs() < 1e-4;
    (lk.exp(), capped)
}

/// Fits the diary-weighted negative-binomial tensor-product P-spline.
pub fn fit_negbin_tensor_gam(table: &CountTable, settings: &SmoothingSettings) -> Result<SmoothSurface> {
    let stats = Stats::new(table)?;
    let n = stats.n;
    let basis = SplineBasis::new(settings.basis_dim, 0.0, n as f64)?;
    let design = Design::new(&basis, n);
    let p = basis.dim * basis.dim;

    let mean = stats.yp.iter().sum::<f64>() / (stats.wp.iter().sum::<f64>() * n as f64);
    let mut coef = vec![mean.ln(); p];
    let (mut k, mut capped) = match settings.dispersion {
        DispersionChoice::Fixed(k) if k > 0.0 && k.is_finite() => (k, false),
        DispersionChoice::Fixed(k) => {
            return Err(Error::InvalidInput(format!("dispersion must be positive, got {k}")))
        }
        DispersionChoice::Estimate => (1.0, false),
    };

    let mut best: Option<(IrlsFit, [f64; 2])> = None;
    let rounds = match settings.dispersion {
        DispersionChoice::Fixed(_) => 1,
        DispersionChoice::Estimate => settings.max_rounds.max(1),
    };
    for round in 0..rounds {
        let (fit, lambdas) = match &settings.lambda {
            LambdaChoice::Fixed(l) => {
                let s = penalty_matrix(&basis, *l);
                (irls(&stats, &design, &s, k, &coef, settings)?, *l)
            }
            LambdaChoice::Select => select_smoothing(&stats, &design, &basis, k, &coef, settings)?,
        };
        coef = fit.coef.clone();
        best = Some((fit, lambdas));
        if let DispersionChoice::Estimate = settings.dispersion {
            let eta = &best.as_ref().unwrap().0.eta;
            let (k_new, c) = profile_dispersion(&stats, eta);
            let stable = (k_new.ln() - k.ln()).abs() < 1e-3;
            k = k_new;
            capped = c;
            if stable || round + 1 == rounds {
                // refit the coefficients at the final dispersion
                let s = penalty_matrix(&basis, lambdas);
                let fit = irls(&stats, &design, &s, k, &coef, settings)?;
                best = Some((fit, lambdas));
                break;
            }
        }
    }
    let (fit, smoothing) = best.expect("at least one round");
    let intercept = fit.coef.iter().sum::<f64>() / p as f64;
    Ok(SmoothSurface {
        coefficients: fit.coef.iter().map(|c| c - intercept).collect(),
        intercept,
        dispersion: k,
        dispersion_capped: capped,
        smoothing,
        edf: fit.edf,
        loglik: fit.loglik,
        deviance: stats.deviance(&fit.eta, k),
        aic: -2.0 * fit.loglik + 2.0 * fit.edf,
        iterations: fit.iterations,
        gradient_norm: fit.gradient_norm,
        basis,
    })
}

fn select_smoothing(
    stats: &Stats,
    design: &Design,
    basis: &SplineBasis,
    k: f64,
    start: &[f64],
    settings: &SmoothingSettings,
) -> Result<(IrlsFit, [f64; 2])> {
    if settings.lambda_grid.is_empty() || settings.lambda_grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidInput("smoothing grid must hold positive values".into()));
    }
    let mut best: Option<(f64, IrlsFit, [f64; 2])> = None;
    let mut warm = start.to_vec();
    let mut last_err = None;
    for &l1 in &settings.lambda_grid {
        for &l2 in &settings.lambda_grid {
            let s = penalty_matrix(basis, [l1, l2]);
            match irls(stats, design, &s, k, &warm, settings) {
                Ok(fit) => {
                    warm.clone_from(&fit.coef);
                    let caic = -2.0 * fit.loglik + 2.0 * fit.edf;
                    if best.as_ref().is_none_or(|b| caic < b.0) {
                        best = Some((caic, fit, [l1, l2]));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    match best {
        Some((_, fit, l)) => Ok((fit, l)),
        None => Err(last_err.expect("grid is non-empty")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::CountRow;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, Poisson};

    fn table_from(n: usize, per_band: usize, mean: impl Fn(usize, usize) -> f64, k: Option<f64>, seed: u64) -> CountTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for band in 0..n {
            for _ in 0..per_band {
                let counts = (0..n)
                    .map(|c| {
                        let m = mean(band, c);
                        let rate = match k {
                            Some(k) => Gamma::new(k, m / k).unwrap().sample(&mut rng),
                            None => m,
                        };
                        if rate <= 0.0 {
                            0
                        } else {
                            Poisson::new(rate).unwrap().sample(&mut rng) as u32
                        }
                    })
                    .collect();
                rows.push(CountRow { band, weight: 1.0, counts });
            }
        }
        CountTable { n_bands: n, rows }
    }

    fn fixed(l: f64, k: f64) -> SmoothingSettings {
        SmoothingSettings {
            basis_dim: 6,
            lambda: LambdaChoice::Fixed([l, l]),
            dispersion: DispersionChoice::Fixed(k),
            ..Default::default()
        }
    }

    #[test]
    fn constant_counts_give_constant_surface() {
        let n = 20;
        let rows = (0..n)
            .flat_map(|band| (0..3).map(move |_| CountRow { band, weight: 1.0, counts: vec![2; n] }))
            .collect();
        let table = CountTable { n_bands: n, rows };
        let s = fit_negbin_tensor_gam(&table, &fixed(1.0, 5.0)).unwrap();
        let m = evaluate_surface(&s, n).unwrap();
        for v in m.m.iter() {
            assert!((v / 2.0 - 1.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn evaluation_matches_fit_time_predictor() {
        let n = 15;
        let table = table_from(n, 4, |a, b| 1.0 + 0.1 * (a + b) as f64, Some(3.0), 1);
        let settings = fixed(10.0, 3.0);
        let s = fit_negbin_tensor_gam(&table, &settings).unwrap();
        let design = Design::new(&s.basis, n);
        let raw: Vec<f64> = s.coefficients.iter().map(|c| c + s.intercept).collect();
        let eta = design.eta(&raw);
        let m = evaluate_surface(&s, n).unwrap();
        for r in 0..n {
            for c in 0..n {
                assert!((m.m[(r, c)].ln() - eta[r * n + c]).abs() < 1e-10);
            }
        }
        assert!(s.coefficients.iter().sum::<f64>().abs() < 1e-9);
        assert!(evaluate_surface(&s, n + 1).is_err());
    }

    #[test]
    fn heavier_penalty_lowers_edf() {
        let n = 15;
        let table = table_from(n, 4, |a, b| (1.0 - ((a as f64 - b as f64) / 6.0).powi(2)).exp(), Some(4.0), 2);
        let mut prev = f64::INFINITY;
        for l in [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0] {
            let s = fit_negbin_tensor_gam(&table, &fixed(l, 4.0)).unwrap();
            assert!(s.edf <= prev + 1e-9, "edf {} after {prev}", s.edf);
            assert!(s.gradient_norm < 1e-5, "gradient {}", s.gradient_norm);
            prev = s.edf;
        }
    }

    #[test]
    fn poisson_data_caps_dispersion() {
        let n = 12;
        // binomial counts: less spread than Poisson, so k runs to the cap
        let rows = (0..n)
            .flat_map(|band| {
                (0..8).map(move |i| CountRow {
                    band,
                    weight: 1.0,
                    counts: (0..n).map(|c| [2, 3, 4, 3][(i + c + band) % 4]).collect(),
                })
            })
            .collect();
        let table = CountTable { n_bands: n, rows };
        let settings = SmoothingSettings {
            basis_dim: 5,
            lambda: LambdaChoice::Fixed([100.0, 100.0]),
            ..Default::default()
        };
        let s = fit_negbin_tensor_gam(&table, &settings).unwrap();
        assert!(s.dispersion_capped);
        assert!((s.dispersion - DISPERSION_BOUNDS.1).abs() < 1.0);
    }

    #[test]
    fn dispersion_is_recovered() {
        let n = 12;
        let table = table_from(n, 30, |_, _| 4.0, Some(2.0), 4);
        let settings = SmoothingSettings {
            basis_dim: 5,
            lambda: LambdaChoice::Fixed([100.0, 100.0]),
            ..Default::default()
        };
        let s = fit_negbin_tensor_gam(&table, &settings).unwrap();
        assert!((s.dispersion - 2.0).abs() < 0.3, "{}", s.dispersion);
        assert!(!s.dispersion_capped);
    }

    #[test]
    fn all_zero_counts_rejected() {
        let table = CountTable {
            n_bands: 3,
            rows: vec![CountRow { band: 0, weight: 1.0, counts: vec![0; 3] }],
        };
        assert!(fit_negbin_tensor_gam(&table, &SmoothingSettings::default()).is_err());
    }
}
