//! Piecewise-constant force of infection, the prevalence it implies and
//! the Bernoulli likelihood of a serological sample.

use serde::{Deserialize, Serialize};

use crate::data::{AgeGrid, SerologyDataset};
use crate::error::{Error, Result};
use crate::optim::{bfgs, nelder_mead, BfgsOptions, NelderMeadOptions};

/// Probabilities are kept inside `[PROB_CLAMP, 1 - PROB_CLAMP]` in the log-likelihood.
pub const PROB_CLAMP: f64 = 1e-12;
/// Fitted rates below this are reported as exactly zero.
pub const ZERO_THRESHOLD: f64 = 1e-8;

/// A force of infection that is constant within each class of an age grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseFoi {
    grid: AgeGrid,
    lambdas: Vec<f64>,
}

impl PiecewiseFoi {
    pub fn new(grid: AgeGrid, lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.len() != grid.n_classes() {
            return Err(Error::GridMismatch(format!(
                "{} rates for {} age classes",
                lambdas.len(),
                grid.n_classes()
            )));
        }
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "force of infection must be finite and non-negative: {lambdas:?}"
            )));
        }
        Ok(PiecewiseFoi { grid, lambdas })
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `∫_A^a λ(s) ds`, zero for `a <= A`.
    pub fn cumulative_hazard(&self, a: f64) -> Result<f64> {
        let g = &self.grid;
        if a.is_nan() || a > g.upper() {
            return Err(Error::AgeOutOfRange {
                age: a,
                min: g.lower(),
                max: g.upper(),
            });
        }
        if a <= g.lower() {
            return Ok(0.0);
        }
        let b = g.breaks();
        let mut h = 0.0;
        for (j, &l) in self.lambdas.iter().enumerate() {
            if a <= b[j] {
                break;
            }
            h += l * (a.min(b[j + 1]) - b[j]);
        }
        Ok(h)
    }

    /// Cumulative hazard at every breakpoint, `H_0 = 0, ..., H_J`.
    pub fn hazard_at_breaks(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.lambdas.len() + 1);
        let mut h = 0.0;
        out.push(h);
        for (j, &l) in self.lambdas.iter().enumerate() {
            h += l * self.grid.width(j);
            out.push(h);
        }
        out
    }

    /// The rate in force at age `a` (zero outside the grid).
    pub fn rate_at_age(&self, a: f64) -> f64 {
        if a <= self.grid.lower() {
            return 0.0;
        }
        self.grid.class_of(a).map_or(0.0, |j| self.lambdas[j])
    }
}

/// Seroprevalence `π(a) = 1 - exp(-∫_A^a λ)`.
pub fn prevalence_at_age(foi: &PiecewiseFoi, a: f64) -> Result<f64> {
    Ok(-(-foi.cumulative_hazard(a)?).exp_m1())
}

/// Susceptible fraction `x(a) = 1 - π(a)` for every age.
pub fn susceptible_profile(foi: &PiecewiseFoi, ages: &[f64]) -> Result<Vec<f64>> {
    ages.iter()
        .map(|&a| Ok((-foi.cumulative_hazard(a)?).exp()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLik {
    pub value: f64,
    /// Number of subjects whose probability hit the clamp.
    pub clamped: usize,
}

/// Bernoulli log-likelihood of a serological sample under `foi`.
pub fn bernoulli_loglik(foi: &PiecewiseFoi, data: &SerologyDataset) -> Result<LogLik> {
    let design = Exposure::new(data, foi.grid())?;
    Ok(design.loglik(foi.lambdas()))
}

/// Time each subject spent in each age class before sampling, so that the
/// cumulative hazard is a dot product with the rate vector.
#[derive(Debug, Clone)]
pub(crate) struct Exposure {
    n_classes: usize,
    rows: Vec<f64>,
    immune: Vec<bool>,
    /// Subjects per class of the grid.
    pub(crate) counts: Vec<usize>,
    pub(crate) immune_counts: Vec<usize>,
}

impl Exposure {
    pub(crate) fn new(data: &SerologyDataset, grid: &AgeGrid) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("serology sample has no subjects".into()));
        }
        let j = grid.n_classes();
        let mut rows = vec![0.0; data.len() * j];
        let mut counts = vec![0; j];
        let mut immune_counts = vec![0; j];
        for (i, s) in data.samples.iter().enumerate() {
            if !(s.age > grid.lower() && s.age <= grid.upper()) {
                return Err(Error::AgeOutOfRange {
                    age: s.age,
                    min: grid.lower(),
                    max: grid.upper(),
                });
            }
            for k in 0..j {
                rows[i * j + k] = grid.overlap(k, grid.lower(), s.age);
            }
            let c = grid.class_of(s.age).expect("age checked against grid");
            counts[c] += 1;
            if s.immune {
                immune_counts[c] += 1;
            }
        }
        Ok(Exposure {
            n_classes: j,
            rows,
            immune: data.samples.iter().map(|s| s.immune).collect(),
            counts,
            immune_counts,
        })
    }

    fn hazard(&self, i: usize, lambdas: &[f64]) -> f64 {
        let row = &self.rows[i * self.n_classes..(i + 1) * self.n_classes];
        row.iter().zip(lambdas).map(|(e, l)| e * l).sum()
    }

    pub(crate) fn loglik(&self, lambdas: &[f64]) -> LogLik {
        let lo_log = PROB_CLAMP.ln();
        let hi_log = (-PROB_CLAMP).ln_1p();
        let mut value = 0.0;
        let mut clamped = 0;
        for (i, &y) in self.immune.iter().enumerate() {
            let h = self.hazard(i, lambdas);
            let p = -(-h).exp_m1();
            if p < PROB_CLAMP {
                clamped += 1;
                value += if y { lo_log } else { hi_log };
            } else if p > 1.0 - PROB_CLAMP {
                clamped += 1;
                value += if y { hi_log } else { lo_log };
            } else if y {
                value += p.ln();
            } else {
                value -= h;
            }
        }
        LogLik { value, clamped }
    }

    /// Log-likelihood and its gradient with respect to the rates. Clamped
    /// subjects contribute no gradient.
    pub(crate) fn loglik_grad(&self, lambdas: &[f64], grad: &mut [f64]) -> f64 {
        let j = self.n_classes;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let lo_log = PROB_CLAMP.ln();
        let hi_log = (-PROB_CLAMP).ln_1p();
        let mut value = 0.0;
        for (i, &y) in self.immune.iter().enumerate() {
            let h = self.hazard(i, lambdas);
            let p = -(-h).exp_m1();
            let d = if p < PROB_CLAMP {
                value += if y { lo_log } else { hi_log };
                continue;
            } else if p > 1.0 - PROB_CLAMP {
                value += if y { hi_log } else { lo_log };
                continue;
            } else if y {
                value += p.ln();
                (-h).exp() / p
            } else {
                value -= h;
                -1.0
            };
            let row = &self.rows[i * j..(i + 1) * j];
            for (g, e) in grad.iter_mut().zip(row) {
                *g += d * e;
            }
        }
        value
    }
}

/// Whether a class of the grid carried serological information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    Observed,
    /// No subject at or beyond this class; the rate is copied from the
    /// last observed class.
    BeyondData,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoiFit {
    pub foi: PiecewiseFoi,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub clamped: usize,
    pub coverage: Vec<Coverage>,
    pub subjects_per_class: Vec<usize>,
}

/// Maximum-likelihood piecewise-constant force of infection under `λ >= 0`.
pub fn fit_piecewise_foi(data: &SerologyDataset, grid: &AgeGrid) -> Result<FoiFit> {
    let design = Exposure::new(data, grid)?;
    let j = grid.n_classes();
    let last = (0..j)
        .rev()
        .find(|&k| design.counts[k] > 0)
        .expect("non-empty sample");
    if let Some(k) = (0..last).find(|&k| design.counts[k] == 0) {
        return Err(Error::InvalidInput(format!(
            "age class {} has no serological observations",
            grid.labels()[k]
        )));
    }
    let free = last + 1;
    let widths = grid.widths();

    let start: Vec<f64> = (0..free)
        .map(|k| {
            let p = (design.immune_counts[k] as f64 / design.counts[k] as f64).clamp(0.01, 0.99);
            (-(-p).ln_1p() / widths[k]).ln()
        })
        .collect();

    let expand = |theta: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend(theta.iter().map(|t| t.exp()));
        out.resize(j, 0.0);
    };
    let objective = |theta: &[f64]| -> f64 {
        let mut lam = Vec::with_capacity(j);
        expand(theta, &mut lam);
        -design.loglik(&lam).value
    };
    let gradient = |theta: &[f64], g: &mut [f64]| {
        let mut lam = Vec::with_capacity(j);
        expand(theta, &mut lam);
        let mut gl = vec![0.0; j];
        design.loglik_grad(&lam, &mut gl);
        for k in 0..theta.len() {
            g[k] = -gl[k] * lam[k];
        }
    };

    let nm = nelder_mead(
        objective,
        &start,
        &NelderMeadOptions {
            max_iter: 200 * free,
            ..Default::default()
        },
    );
    let qn = bfgs(objective, gradient, &nm.x, &BfgsOptions::default());
    if !qn.converged {
        return Err(Error::NonConvergence {
            what: "piecewise force-of-infection fit".into(),
            iterations: nm.iterations + qn.iterations,
            residual: qn.grad_norm,
            best: qn.x.iter().map(|t| t.exp()).collect(),
        });
    }

    let mut lambdas: Vec<f64> = qn.x.iter().map(|t| t.exp()).collect();
    snap_to_boundary(&design, &mut lambdas, j);
    let fill = lambdas[last];
    lambdas.resize(j, fill);
    let ll = design.loglik(&lambdas);
    let coverage = (0..j)
        .map(|k| if k <= last { Coverage::Observed } else { Coverage::BeyondData })
        .collect();
    Ok(FoiFit {
        foi: PiecewiseFoi::new(grid.clone(), lambdas)?,
        loglik: ll.value,
        converged: true,
        iterations: nm.iterations + qn.iterations,
        clamped: ll.clamped,
        coverage,
        subjects_per_class: design.counts.clone(),
    })
}

/// Log-parameterised optima approach `λ = 0` only asymptotically. Rates that
/// are tiny and whose likelihood derivative still points below zero are set
/// to exactly zero when doing so costs no likelihood.
fn snap_to_boundary(design: &Exposure, lambdas: &mut [f64], j: usize) {
    let mut full = lambdas.to_vec();
    full.resize(j, 0.0);
    let mut grad = vec![0.0; j];
    let base = design.loglik_grad(&full, &mut grad);
    let scale = lambdas.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let mut snapped = full.clone();
    let mut any = false;
    for k in 0..lambdas.len() {
        if lambdas[k] < ZERO_THRESHOLD || (lambdas[k] < 1e-4 * scale && grad[k] < 0.0) {
            snapped[k] = 0.0;
            any = true;
        }
    }
    if any && design.loglik(&snapped).value >= base - 1e-8 {
        lambdas.copy_from_slice(&snapped[..lambdas.len()]);
    }
}
