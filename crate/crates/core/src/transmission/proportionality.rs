//! Proportionality factors `q(a, a')` turning contact rates into
//! transmission rates, `β_ij = q_ij c_ij`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contact::ContactRates;
use crate::data::{AgeGrid, Demography, SerologyDataset};
use crate::error::{Error, Result};
use crate::waifw::WaifwMatrix;

use super::engine::{fit_beta_model, profile_likelihood_ci, BetaModel, FitOptions, ProfileInterval, TransmissionFit};

pub const DEFAULT_SPLIT_AGE: f64 = 12.0;

/// 2x2 structures over (young, old); rows are the susceptible class and
/// columns the infectious class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TwoClassStructure {
    M1,
    M2,
    M3,
    M4,
    M5,
}

impl TwoClassStructure {
    /// Which γ (0 or 1) sits in each block; `None` is a zero block.
    fn blocks(self) -> [[Option<usize>; 2]; 2] {
        match self {
            TwoClassStructure::M1 => [[Some(0), Some(1)], [Some(1), Some(1)]],
            TwoClassStructure::M2 => [[Some(0), Some(0)], [Some(1), Some(1)]],
            TwoClassStructure::M3 => [[Some(0), Some(1)], [Some(1), Some(0)]],
            TwoClassStructure::M4 => [[Some(0), None], [None, Some(1)]],
            TwoClassStructure::M5 => [[Some(0), Some(1)], [Some(0), Some(1)]],
        }
    }
}

/// Loglinear forms for `ln q` in the susceptible age `a` and the
/// infectious age `a'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoglinearForm {
    /// `γ0 + γ1 a`
    M6,
    /// `γ0 + γ1 a + γ2 a²`
    M7,
    /// `γ0 + γ1 a'`
    M8,
    /// `γ0 + γ1 a' + γ2 a'²`
    M9,
    /// `γ0 + γ1 a + γ2 a'`
    M10,
}

impl LoglinearForm {
    pub fn n_params(self) -> usize {
        match self {
            LoglinearForm::M6 | LoglinearForm::M8 => 2,
            _ => 3,
        }
    }

    fn features(self, a: f64, a2: f64) -> Vec<f64> {
        match self {
            LoglinearForm::M6 => vec![1.0, a],
            LoglinearForm::M7 => vec![1.0, a, a * a],
            LoglinearForm::M8 => vec![1.0, a2],
            LoglinearForm::M9 => vec![1.0, a2, a2 * a2],
            LoglinearForm::M10 => vec![1.0, a, a2],
        }
    }

    /// Powers of age multiplying each coefficient, for scaling.
    fn degrees(self) -> &'static [i32] {
        match self {
            LoglinearForm::M6 | LoglinearForm::M8 => &[0, 1],
            LoglinearForm::M7 | LoglinearForm::M9 => &[0, 1, 2],
            LoglinearForm::M10 => &[0, 1, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ProportionalityModel {
    Constant {
        q: f64,
    },
    DiscreteTwoClass {
        structure: TwoClassStructure,
        gamma: [f64; 2],
        split: f64,
    },
    Loglinear {
        form: LoglinearForm,
        gamma: Vec<f64>,
    },
}

impl ProportionalityModel {
    pub fn constant() -> Self {
        ProportionalityModel::Constant { q: 0.0 }
    }

    pub fn two_class(structure: TwoClassStructure) -> Self {
        ProportionalityModel::DiscreteTwoClass {
            structure,
            gamma: [0.0; 2],
            split: DEFAULT_SPLIT_AGE,
        }
    }

    pub fn loglinear(form: LoglinearForm) -> Self {
        ProportionalityModel::Loglinear {
            form,
            gamma: vec![0.0; form.n_params()],
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            ProportionalityModel::Constant { .. } => 1,
            ProportionalityModel::DiscreteTwoClass { .. } => 2,
            ProportionalityModel::Loglinear { form, .. } => form.n_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            ProportionalityModel::Constant { q } => vec![*q],
            ProportionalityModel::DiscreteTwoClass { gamma, .. } => gamma.to_vec(),
            ProportionalityModel::Loglinear { gamma, .. } => gamma.clone(),
        }
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.n_params() {
            return Err(Error::InvalidInput(format!(
                "model {self} takes {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut out = self.clone();
        match &mut out {
            ProportionalityModel::Constant { q } => *q = params[0],
            ProportionalityModel::DiscreteTwoClass { gamma, .. } => gamma.copy_from_slice(params),
            ProportionalityModel::Loglinear { gamma, .. } => gamma.copy_from_slice(params),
        }
        Ok(out)
    }

    fn check(&self) -> Result<()> {
        let ok = match self {
            ProportionalityModel::Constant { q } => q.is_finite() && *q >= 0.0,
            ProportionalityModel::DiscreteTwoClass { gamma, split, .. } => {
                split.is_finite() && gamma.iter().all(|g| g.is_finite() && *g >= 0.0)
            }
            ProportionalityModel::Loglinear { form, gamma } => {
                gamma.len() == form.n_params() && gamma.iter().all(|g| g.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid parameters for model {self}")))
        }
    }

    /// `q_ij` on a grid. Two-class models put class `i` in the young block
    /// when its midpoint lies below the split age.
    pub fn q_matrix(&self, grid: &AgeGrid) -> Result<DMatrix<f64>> {
        self.check()?;
        let j = grid.n_classes();
        let mid = grid.midpoints();
        Ok(match self {
            ProportionalityModel::Constant { q } => DMatrix::from_element(j, j, *q),
            ProportionalityModel::DiscreteTwoClass { structure, gamma, split } => {
                let blocks = structure.blocks();
                let side = |k: usize| usize::from(mid[k] >= *split);
                DMatrix::from_fn(j, j, |r, c| blocks[side(r)][side(c)].map_or(0.0, |g| gamma[g]))
            }
            ProportionalityModel::Loglinear { form, gamma } => DMatrix::from_fn(j, j, |r, c| {
                let f = form.features(mid[r], mid[c]);
                f.iter().zip(gamma).map(|(x, g)| x * g).sum::<f64>().exp()
            }),
        })
    }
}

impl fmt::Display for ProportionalityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProportionalityModel::Constant { .. } => f.write_str("constant"),
            ProportionalityModel::DiscreteTwoClass { structure, .. } => write!(f, "{structure:?}"),
            ProportionalityModel::Loglinear { form, .. } => write!(f, "{form:?}"),
        }
    }
}

impl FromStr for ProportionalityModel {
    type Err = Error;

    /// `constant`, `M1` ... `M10`.
    fn from_str(s: &str) -> Result<Self> {
        use LoglinearForm::*;
        use TwoClassStructure::*;
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "CONSTANT" => ProportionalityModel::constant(),
            "M1" => ProportionalityModel::two_class(M1),
            "M2" => ProportionalityModel::two_class(M2),
            "M3" => ProportionalityModel::two_class(M3),
            "M4" => ProportionalityModel::two_class(M4),
            "M5" => ProportionalityModel::two_class(M5),
            "M6" => ProportionalityModel::loglinear(M6),
            "M7" => ProportionalityModel::loglinear(M7),
            "M8" => ProportionalityModel::loglinear(M8),
            "M9" => ProportionalityModel::loglinear(M9),
            "M10" => ProportionalityModel::loglinear(M10),
            _ => return Err(Error::InvalidInput(format!("unknown proportionality model {s:?}"))),
        })
    }
}

fn check_rates(c: &ContactRates, grid: &AgeGrid) -> Result<()> {
    if c.grid != *grid || c.c.nrows() != grid.n_classes() || c.c.ncols() != grid.n_classes() {
        return Err(Error::GridMismatch("contact rates are not on the transmission grid".into()));
    }
    Ok(())
}

/// `β_ij = q_ij c_ij`.
pub fn apply_proportionality(model: &ProportionalityModel, c: &ContactRates, grid: &AgeGrid) -> Result<WaifwMatrix> {
    check_rates(c, grid)?;
    let q = model.q_matrix(grid)?;
    WaifwMatrix::new(grid.clone(), q.component_mul(&c.c))
}

struct ProportionalityBeta<'a> {
    template: &'a ProportionalityModel,
    c: &'a DMatrix<f64>,
    grid: &'a AgeGrid,
    /// Feature values per cell for loglinear models.
    features: Vec<Vec<f64>>,
}

impl<'a> ProportionalityBeta<'a> {
    fn new(template: &'a ProportionalityModel, c: &'a DMatrix<f64>, grid: &'a AgeGrid) -> Self {
        let j = grid.n_classes();
        let mid = grid.midpoints();
        let features = match template {
            ProportionalityModel::Loglinear { form, .. } => (0..j * j)
                .map(|k| form.features(mid[k / j], mid[k % j]))
                .collect(),
            _ => Vec::new(),
        };
        ProportionalityBeta {
            template,
            c,
            grid,
            features,
        }
    }

    fn q(&self, params: &[f64]) -> DMatrix<f64> {
        let j = self.grid.n_classes();
        match self.template {
            ProportionalityModel::Loglinear { .. } => DMatrix::from_fn(j, j, |r, s| {
                self.features[r * j + s]
                    .iter()
                    .zip(params)
                    .map(|(x, g)| x * g)
                    .sum::<f64>()
                    .exp()
            }),
            // validated on construction; linear models are cheap to rebuild
            other => other
                .with_params(params)
                .and_then(|m| m.q_matrix(self.grid))
                .unwrap_or_else(|_| DMatrix::from_element(j, j, f64::NAN)),
        }
    }
}

impl BetaModel for ProportionalityBeta<'_> {
    fn n_params(&self) -> usize {
        self.template.n_params()
    }

    fn nonnegative(&self, _: usize) -> bool {
        !matches!(self.template, ProportionalityModel::Loglinear { .. })
    }

    fn scale(&self, p: usize) -> f64 {
        match self.template {
            ProportionalityModel::Loglinear { form, .. } => self.grid.upper().powi(-form.degrees()[p]),
            _ => 1.0,
        }
    }

    fn beta(&self, params: &[f64]) -> DMatrix<f64> {
        self.q(params).component_mul(self.c)
    }

    fn beta_derivative(&self, params: &[f64], p: usize) -> DMatrix<f64> {
        let j = self.grid.n_classes();
        match self.template {
            ProportionalityModel::Loglinear { .. } => {
                let q = self.q(params);
                DMatrix::from_fn(j, j, |r, s| q[(r, s)] * self.features[r * j + s][p] * self.c[(r, s)])
            }
            other => {
                let mut unit = vec![0.0; other.n_params()];
                unit[p] = 1.0;
                let dq = other
                    .with_params(&unit)
                    .and_then(|m| m.q_matrix(self.grid))
                    .expect("unit parameters are valid");
                dq.component_mul(self.c)
            }
        }
    }

    fn scaled_params(&self, s: f64) -> Vec<f64> {
        match self.template {
            ProportionalityModel::Loglinear { form, .. } => {
                let mut g = vec![0.0; form.n_params()];
                g[0] = s.ln();
                g
            }
            other => vec![s; other.n_params()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProportionalityFit {
    pub model: ProportionalityModel,
    pub fit: TransmissionFit,
    pub warnings: Vec<String>,
}

/// Fits the parameters of `template` with the contact rates held fixed.
pub fn fit_proportionality(
    template: &ProportionalityModel,
    c_hat: &ContactRates,
    serology: &SerologyDataset,
    demography: &Demography,
    grid: &AgeGrid,
) -> Result<ProportionalityFit> {
    fit_proportionality_with(template, c_hat, serology, demography, grid, &FitOptions::default())
}

pub(crate) fn fit_proportionality_with(
    template: &ProportionalityModel,
    c_hat: &ContactRates,
    serology: &SerologyDataset,
    demography: &Demography,
    grid: &AgeGrid,
    options: &FitOptions,
) -> Result<ProportionalityFit> {
    check_rates(c_hat, grid)?;
    if let ProportionalityModel::DiscreteTwoClass { split, .. } = template {
        let mid = grid.midpoints();
        if mid.iter().all(|m| m < split) || mid.iter().all(|m| m >= split) {
            return Err(Error::InvalidInput(format!("split age {split} leaves one block empty")));
        }
    }
    let model = ProportionalityBeta::new(template, &c_hat.c, grid);
    let fit = fit_beta_model(&model, serology, demography, grid, options)?;
    let fitted = template.with_params(&fit.params)?;
    let mut warnings = Vec::new();
    if !fit.identifiable {
        warnings.push(format!(
            "information matrix is near-singular (condition {:.3e}); parameters are not identifiable",
            fit.information_condition
        ));
    }
    let increasing_in_infector = match &fitted {
        ProportionalityModel::Loglinear { form: LoglinearForm::M8 | LoglinearForm::M9, gamma } => gamma[1] > 0.0,
        ProportionalityModel::Loglinear { form: LoglinearForm::M10, gamma } => gamma[2] > 0.0,
        _ => false,
    };
    if increasing_in_infector {
        warnings.push("q increases exponentially with the age of the infectious contact".into());
    }
    Ok(ProportionalityFit {
        model: fitted,
        fit,
        warnings,
    })
}

/// Profile-likelihood interval for parameter `index` of a fitted
/// proportionality model; the contact rates stay fixed.
pub fn proportionality_profile_ci(
    fitted: &ProportionalityFit,
    c_hat: &ContactRates,
    index: usize,
    serology: &SerologyDataset,
    demography: &Demography,
    grid: &AgeGrid,
    level: f64,
) -> Result<ProfileInterval> {
    check_rates(c_hat, grid)?;
    let model = ProportionalityBeta::new(&fitted.model, &c_hat.c, grid);
    profile_likelihood_ci(&model, &fitted.fit, index, serology, demography, grid, level)
}
