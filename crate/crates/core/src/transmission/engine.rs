//! Likelihood fit of a parameterised WAIFW matrix to serology through the
//! endemic force of infection, with identifiability diagnostics and profile
//! likelihood intervals.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{AgeGrid, Demography, SerologyDataset};
use crate::error::{Error, Result};
use crate::foi::{Exposure, ZERO_THRESHOLD};
use crate::optim::{bfgs, bisect, hessian_from_gradient, nelder_mead, numerical_gradient, BfgsOptions, NelderMeadOptions};
use crate::waifw::{foi_jacobian, solve_fixed_point_raw, susceptible_at_breaks, WaifwMatrix};

use super::{dominant_eigenvalue, ngm_raw};

/// Information matrices whose normalised condition (smallest over largest
/// singular value) falls below this are reported as non-identifiable.
pub const IDENTIFIABILITY_THRESHOLD: f64 = 1e-6;

const START_R0: f64 = 5.0;

/// A WAIFW matrix as a differentiable function of a parameter vector.
pub trait BetaModel {
    fn n_params(&self) -> usize;

    /// Whether parameter `p` is constrained to be non-negative.
    fn nonnegative(&self, p: usize) -> bool;

    /// Natural size of an unconstrained parameter, used to scale the
    /// optimiser's coordinates.
    fn scale(&self, _p: usize) -> f64 {
        1.0
    }

    fn beta(&self, params: &[f64]) -> DMatrix<f64>;

    fn beta_derivative(&self, params: &[f64], p: usize) -> DMatrix<f64>;

    /// Parameters whose β is multiplied by `s` relative to `scaled_params(1)`.
    fn scaled_params(&self, s: f64) -> Vec<f64> {
        vec![s; self.n_params()]
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Start values in natural units; by default chosen so that R0 = 5.
    pub start: Option<Vec<f64>>,
    /// Skip the Hessian-based identifiability check.
    pub skip_identifiability: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransmissionFit {
    pub params: Vec<f64>,
    #[serde(skip)]
    pub beta: DMatrix<f64>,
    pub foi: Vec<f64>,
    pub loglik: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub aic: f64,
    pub bic: f64,
    pub r0: f64,
    pub iterations: usize,
    /// Objective evaluations at which the fixed point failed to converge.
    pub fixed_point_failures: usize,
    /// Normalised condition of the observed information (NaN when skipped).
    pub information_condition: f64,
    pub identifiable: bool,
}

impl TransmissionFit {
    pub fn waifw(&self, grid: &AgeGrid) -> Result<WaifwMatrix> {
        WaifwMatrix::new(grid.clone(), self.beta.clone())
    }
}

pub(crate) struct Problem<'a, M: ?Sized> {
    pub(crate) model: &'a M,
    exposure: Exposure,
    widths: Vec<f64>,
    c: f64,
    failures: Cell<usize>,
}

impl<'a, M: BetaModel + ?Sized> Problem<'a, M> {
    pub(crate) fn new(model: &'a M, serology: &SerologyDataset, demography: &Demography, grid: &AgeGrid) -> Result<Self> {
        demography.check_grid(grid)?;
        let probe = model.beta(&model.scaled_params(1.0));
        if probe.nrows() != grid.n_classes() || probe.ncols() != grid.n_classes() {
            return Err(Error::GridMismatch(format!(
                "model produces a {}x{} matrix for {} age classes",
                probe.nrows(),
                probe.ncols(),
                grid.n_classes()
            )));
        }
        Ok(Problem {
            model,
            exposure: Exposure::new(serology, grid)?,
            widths: grid.widths(),
            c: demography.mass_action_constant(),
            failures: Cell::new(0),
        })
    }

    fn valid(&self, params: &[f64]) -> bool {
        params
            .iter()
            .enumerate()
            .all(|(p, v)| v.is_finite() && (!self.model.nonnegative(p) || *v >= 0.0))
    }

    fn lambdas(&self, beta: &DMatrix<f64>) -> Option<Vec<f64>> {
        if beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return None;
        }
        match solve_fixed_point_raw(beta, &self.widths, self.c) {
            Ok(l) => Some(l),
            Err(_) => {
                self.failures.set(self.failures.get() + 1);
                None
            }
        }
    }

    /// Log-likelihood in natural parameters; `-inf` when β is invalid or
    /// the fixed point fails.
    pub(crate) fn loglik(&self, params: &[f64]) -> f64 {
        if !self.valid(params) {
            return f64::NEG_INFINITY;
        }
        match self.lambdas(&self.model.beta(params)) {
            Some(l) => self.exposure.loglik(&l).value,
            None => f64::NEG_INFINITY,
        }
    }

    /// Log-likelihood and its gradient in natural parameters, through the
    /// implicit function theorem on `λ = T(λ, β)`.
    pub(crate) fn loglik_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if !self.valid(params) {
            return f64::NEG_INFINITY;
        }
        let beta = self.model.beta(params);
        let Some(lambda) = self.lambdas(&beta) else {
            return f64::NEG_INFINITY;
        };
        let j = self.widths.len();
        let mut dl = vec![0.0; j];
        let value = self.exposure.loglik_grad(&lambda, &mut dl);
        let mut a = foi_jacobian(&beta, &self.widths, self.c, &lambda);
        a.iter_mut().for_each(|x| *x = -*x);
        for i in 0..j {
            a[(i, i)] += 1.0;
        }
        let Some(v) = a.transpose().lu().solve(&DVector::from_vec(dl)) else {
            numerical_gradient(|p| self.loglik(p), params, grad);
            return value;
        };
        let x = susceptible_at_breaks(&self.widths, &lambda);
        // dℓ/dβ_ab = v_a c (x_{b-1} - x_b)
        let dbeta = DMatrix::from_fn(j, j, |r, s| v[r] * self.c * (x[s] - x[s + 1]));
        for (p, g) in grad.iter_mut().enumerate() {
            *g = self.model.beta_derivative(params, p).dot(&dbeta);
        }
        value
    }

    fn to_natural(&self, theta: &[f64], base: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(p, t)| if self.model.nonnegative(p) { base[p] * t.exp() } else { base[p] * t })
            .collect()
    }

    fn r0(&self, beta: &DMatrix<f64>) -> Result<f64> {
        dominant_eigenvalue(&ngm_raw(beta, &self.widths, self.c))
    }

    /// Start values giving R0 = 5.
    fn default_start(&self) -> Result<Vec<f64>> {
        let unit = self.model.scaled_params(1.0);
        let r = self.r0(&self.model.beta(&unit))?;
        if !(r > 0.0) {
            return Err(Error::InvalidInput("model yields R0 = 0 at its reference parameters".into()));
        }
        Ok(self.model.scaled_params(START_R0 / r))
    }

    pub(crate) fn fit(&self, options: &FitOptions) -> Result<TransmissionFit> {
        let k = self.model.n_params();
        let start = match &options.start {
            Some(s) if s.len() == k => s.clone(),
            Some(s) => {
                return Err(Error::InvalidInput(format!("{} start values for {k} parameters", s.len())));
            }
            None => self.default_start()?,
        };
        // θ = 0 at the start; non-negative parameters move on the log scale
        let base: Vec<f64> = (0..k)
            .map(|p| {
                if self.model.nonnegative(p) {
                    start[p].max(1e-12)
                } else {
                    self.model.scale(p)
                }
            })
            .collect();
        let theta0: Vec<f64> = (0..k)
            .map(|p| if self.model.nonnegative(p) { 0.0 } else { start[p] / base[p] })
            .collect();

        let objective = |theta: &[f64]| -> f64 { -self.loglik(&self.to_natural(theta, &base)) };
        let gradient = |theta: &[f64], g: &mut [f64]| {
            let nat = self.to_natural(theta, &base);
            let mut gn = vec![0.0; k];
            self.loglik_grad(&nat, &mut gn);
            for p in 0..k {
                let d = if self.model.nonnegative(p) { nat[p] } else { base[p] };
                g[p] = -gn[p] * d;
            }
        };
        if !objective(&theta0).is_finite() {
            return Err(Error::NonConvergence {
                what: "force-of-infection fixed point at the start values".into(),
                iterations: 0,
                residual: f64::NAN,
                best: start,
            });
        }
        let nm = nelder_mead(
            objective,
            &theta0,
            &NelderMeadOptions {
                max_iter: 200 * k.max(1),
                ..Default::default()
            },
        );
        let qn = bfgs(objective, gradient, &nm.x, &BfgsOptions::default());
        if !qn.converged || !qn.value.is_finite() {
            return Err(Error::NonConvergence {
                what: "transmission model fit".into(),
                iterations: nm.iterations + qn.iterations,
                residual: qn.grad_norm,
                best: self.to_natural(&qn.x, &base),
            });
        }
        let mut params = self.to_natural(&qn.x, &base);
        self.snap(&mut params);
        self.summarise(params, nm.iterations + qn.iterations, options)
    }

    /// Non-negative parameters that crawled towards zero on the log scale
    /// are set to exactly zero when that costs no likelihood.
    fn snap(&self, params: &mut [f64]) {
        let k = params.len();
        let mut grad = vec![0.0; k];
        let base = self.loglik_grad(params, &mut grad);
        let scale = params.iter().map(|p| p.abs()).fold(0.0, f64::max).max(1e-300);
        let mut snapped = params.to_vec();
        let mut any = false;
        for p in 0..k {
            let tiny = params[p] < ZERO_THRESHOLD * scale || (params[p] < 1e-4 * scale && grad[p] < 0.0);
            if self.model.nonnegative(p) && params[p] > 0.0 && tiny {
                snapped[p] = 0.0;
                any = true;
            }
        }
        if any && self.loglik(&snapped) >= base - 1e-8 {
            params.copy_from_slice(&snapped);
        }
    }

    fn summarise(&self, params: Vec<f64>, iterations: usize, options: &FitOptions) -> Result<TransmissionFit> {
        let beta = self.model.beta(&params);
        let foi = self.lambdas(&beta).ok_or_else(|| Error::NonConvergence {
            what: "force-of-infection fixed point at the optimum".into(),
            iterations,
            residual: f64::NAN,
            best: params.clone(),
        })?;
        let loglik = self.exposure.loglik(&foi).value;
        let k = params.len();
        let n = self.exposure.counts.iter().sum::<usize>();
        let condition = if options.skip_identifiability {
            f64::NAN
        } else {
            self.information_condition(&params)
        };
        Ok(TransmissionFit {
            r0: self.r0(&beta)?,
            beta,
            foi,
            loglik,
            n_params: k,
            n_obs: n,
            aic: -2.0 * loglik + 2.0 * k as f64,
            bic: -2.0 * loglik + k as f64 * (n as f64).ln(),
            iterations,
            fixed_point_failures: self.failures.get(),
            identifiable: !(condition < IDENTIFIABILITY_THRESHOLD),
            information_condition: condition,
            params,
        })
    }

    /// Smallest over largest singular value of the diagonally normalised
    /// observed information in natural parameters.
    fn information_condition(&self, params: &[f64]) -> f64 {
        let k = params.len();
        let typical = params.iter().map(|p| p.abs()).fold(0.0, f64::max).max(1e-12);
        let steps: Vec<f64> = (0..k)
            .map(|p| {
                let size = if self.model.nonnegative(p) { typical } else { self.model.scale(p) };
                1e-5 * params[p].abs().max(1e-2 * size)
            })
            .collect();
        let lower: Vec<Option<f64>> = (0..k).map(|p| self.model.nonnegative(p).then_some(0.0)).collect();
        let h = hessian_from_gradient(
            |x, g| {
                self.loglik_grad(x, g);
                g.iter_mut().for_each(|v| *v = -*v);
            },
            params,
            &steps,
            &lower,
        );
        let info = DMatrix::from_fn(k, k, |i, j| h[i][j]);
        if info.iter().any(|x| !x.is_finite()) {
            return 0.0;
        }
        let diag_max = (0..k).map(|i| info[(i, i)].abs()).fold(0.0, f64::max);
        if diag_max == 0.0 {
            return 0.0;
        }
        let d: Vec<f64> = (0..k)
            .map(|i| {
                let v = info[(i, i)].abs();
                if v <= 1e-12 * diag_max {
                    0.0
                } else {
                    1.0 / v.sqrt()
                }
            })
            .collect();
        if d.contains(&0.0) {
            return 0.0;
        }
        let scaled = DMatrix::from_fn(k, k, |i, j| info[(i, j)] * d[i] * d[j]);
        let sv = scaled.singular_values();
        let max = sv.max();
        if max > 0.0 {
            sv.min() / max
        } else {
            0.0
        }
    }
}

/// Maximum-likelihood fit of a WAIFW model to serology.
pub fn fit_beta_model<M: BetaModel + ?Sized>(
    model: &M,
    serology: &SerologyDataset,
    demography: &Demography,
    grid: &AgeGrid,
    options: &FitOptions,
) -> Result<TransmissionFit> {
    Problem::new(model, serology, demography, grid)?.fit(options)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// The profile never dropped below the cut-off before the lower end
    /// of the parameter domain; `lower` is that end.
    pub lower_open: bool,
    pub upper_open: bool,
}

/// Interval where the profile log-likelihood stays within half the
/// chi-square(1) quantile of its maximum, located by expanding steps and
/// bisection. `domain` bounds the search.
pub fn profile_interval<F>(
    mut profile: F,
    estimate: f64,
    max_loglik: f64,
    domain: (f64, f64),
    level: f64,
) -> Result<ProfileInterval>
where
    F: FnMut(f64) -> f64,
{
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level {level} outside (0, 1)")));
    }
    let chi = ChiSquared::new(1.0).expect("one degree of freedom").inverse_cdf(level);
    let cut = max_loglik - 0.5 * chi;
    let mut excess = |x: f64| {
        let v = profile(x);
        if v.is_finite() {
            v - cut
        } else {
            -1.0
        }
    };
    let step0 = 0.05 * estimate.abs().max(1e-8);
    let mut side = |dir: f64| -> (f64, bool) {
        let edge = if dir < 0.0 { domain.0 } else { domain.1 };
        let mut inside = estimate;
        let mut step = step0;
        for _ in 0..200 {
            let mut x = estimate + dir * step;
            let at_edge = (dir < 0.0 && x <= edge) || (dir > 0.0 && x >= edge);
            if at_edge {
                x = edge;
            }
            if excess(x) < 0.0 {
                let root = bisect(&mut excess, inside.min(x), inside.max(x), 1e-10 * step0.max(x.abs()));
                return (root.unwrap_or(x), false);
            }
            if at_edge || !x.is_finite() {
                return (x, true);
            }
            inside = x;
            step *= 2.0;
        }
        (inside, true)
    };
    let (lower, lower_open) = side(-1.0);
    let (upper, upper_open) = side(1.0);
    Ok(ProfileInterval {
        lower,
        upper,
        level,
        lower_open,
        upper_open,
    })
}

/// The model with parameter `fixed` pinned to a value.
struct Pinned<'a, M: ?Sized> {
    inner: &'a M,
    fixed: usize,
    value: f64,
}

impl<M: BetaModel + ?Sized> Pinned<'_, M> {
    fn full(&self, params: &[f64]) -> Vec<f64> {
        let mut out = params.to_vec();
        out.insert(self.fixed, self.value);
        out
    }

    fn inner_index(&self, p: usize) -> usize {
        if p < self.fixed {
            p
        } else {
            p + 1
        }
    }
}

impl<M: BetaModel + ?Sized> BetaModel for Pinned<'_, M> {
    fn n_params(&self) -> usize {
        self.inner.n_params() - 1
    }

    fn nonnegative(&self, p: usize) -> bool {
        self.inner.nonnegative(self.inner_index(p))
    }

    fn scale(&self, p: usize) -> f64 {
        self.inner.scale(self.inner_index(p))
    }

    fn beta(&self, params: &[f64]) -> DMatrix<f64> {
        self.inner.beta(&self.full(params))
    }

    fn beta_derivative(&self, params: &[f64], p: usize) -> DMatrix<f64> {
        self.inner.beta_derivative(&self.full(params), self.inner_index(p))
    }
}

/// Profile-likelihood interval for one parameter of a fitted model, with
/// the contact rates inside the model held fixed.
pub fn profile_likelihood_ci<M: BetaModel + ?Sized>(
    model: &M,
    fit: &TransmissionFit,
    index: usize,
    serology: &SerologyDataset,
    demography: &Demography,
    grid: &AgeGrid,
    level: f64,
) -> Result<ProfileInterval> {
    let k = model.n_params();
    if index >= k || fit.params.len() != k {
        return Err(Error::InvalidInput(format!("parameter {index} out of range for a {k}-parameter model")));
    }
    let domain = if model.nonnegative(index) {
        (0.0, f64::INFINITY)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    let estimate = fit.params[index];
    let profile = |value: f64| -> f64 {
        if k == 1 {
            let problem = Problem::new(model, serology, demography, grid);
            return problem.map_or(f64::NEG_INFINITY, |p| p.loglik(&[value]));
        }
        let pinned = Pinned {
            inner: model,
            fixed: index,
            value,
        };
        let mut start: Vec<f64> = fit.params.clone();
        start.remove(index);
        for (p, s) in start.iter_mut().enumerate() {
            if pinned.nonnegative(p) {
                *s = s.max(1e-6 * fit.params.iter().map(|x| x.abs()).fold(0.0, f64::max));
            }
        }
        let options = FitOptions {
            start: Some(start),
            skip_identifiability: true,
        };
        fit_beta_model(&pinned, serology, demography, grid, &options).map_or(f64::NEG_INFINITY, |f| f.loglik)
    };
    profile_interval(profile, estimate, fit.loglik, domain, level)
}
