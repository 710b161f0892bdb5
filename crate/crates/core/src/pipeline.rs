//! End-to-end estimation: contact rates from a diary survey and the fit of
//! a list of candidate transmission models on shared inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contact::{
    build_count_table, contact_rates_on_grid, evaluate_surface, fit_negbin_tensor_gam, symmetrize_reciprocal,
    ContactRates, SmoothSurface, SmoothingSettings, SocialContactMatrix, SURFACE_BANDS,
};
use crate::data::{filter_contacts, AgeGrid, ContactFilter, ContactSurvey, Demography, SerologyDataset};
use crate::error::{Error, Result};
use crate::par::{map_indexed, Schedule};
use crate::transmission::{fit_proportionality, ProportionalityModel, TransmissionFit};
use crate::waifw::{fit_mixing_pattern, MixingPattern};

/// A candidate in a model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateModel {
    /// Mixing pattern imposed on the WAIFW matrix; no contact data.
    Pattern(MixingPattern),
    /// Proportionality model over contact rates from the given filter.
    Proportional {
        filter: ContactFilter,
        model: ProportionalityModel,
    },
}

impl CandidateModel {
    /// Parses `W1`-`W6`, `C1`-`C5` (constant q under that filter) or
    /// `M1`-`M10` (under `default_filter`).
    pub fn parse(name: &str, default_filter: ContactFilter) -> Result<Self> {
        let upper = name.trim().to_ascii_uppercase();
        if upper.starts_with('W') {
            return Ok(CandidateModel::Pattern(upper.parse()?));
        }
        if upper.starts_with('C') {
            let filter = upper.parse::<ContactFilter>().map_err(Error::InvalidInput)?;
            return Ok(CandidateModel::Proportional {
                filter,
                model: ProportionalityModel::constant(),
            });
        }
        if upper.starts_with('M') {
            return Ok(CandidateModel::Proportional {
                filter: default_filter,
                model: upper.parse()?,
            });
        }
        Err(Error::InvalidInput(format!("unknown model {name:?}")))
    }

    pub fn n_params(&self) -> usize {
        match self {
            CandidateModel::Pattern(p) => p.n_params(),
            CandidateModel::Proportional { model, .. } => model.n_params(),
        }
    }

    pub fn filter(&self) -> Option<ContactFilter> {
        match self {
            CandidateModel::Pattern(_) => None,
            CandidateModel::Proportional { filter, .. } => Some(*filter),
        }
    }
}

impl fmt::Display for CandidateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateModel::Pattern(p) => write!(f, "{p}"),
            CandidateModel::Proportional {
                filter,
                model: ProportionalityModel::Constant { .. },
            } => write!(f, "{filter}"),
            CandidateModel::Proportional { model, .. } => write!(f, "{model}"),
        }
    }
}

impl FromStr for CandidateModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CandidateModel::parse(s, ContactFilter::C1)
    }
}

/// Contact-rate estimate for one filter.
#[derive(Debug, Clone)]
pub struct ContactEstimate {
    pub filter: ContactFilter,
    pub surface: SmoothSurface,
    /// Fitted mean contacts on one-year bands.
    pub raw: SocialContactMatrix,
    pub symmetric: SocialContactMatrix,
    pub band_population: Vec<f64>,
    /// Per-capita annual rates on the transmission grid.
    pub rates: ContactRates,
}

/// Filters contacts, smooths the count surface on one-year bands, imposes
/// reciprocity and aggregates to per-capita rates on `grid`.
pub fn estimate_contact_rates(
    survey: &ContactSurvey,
    filter: ContactFilter,
    settings: &SmoothingSettings,
    demography: &Demography,
    grid: &AgeGrid,
) -> Result<ContactEstimate> {
    let filtered = filter_contacts(survey, filter);
    let table = build_count_table(&filtered, SURFACE_BANDS);
    let surface = fit_negbin_tensor_gam(&table, settings)?;
    rates_from_surface(surface, filter, demography, grid)
}

pub fn rates_from_surface(
    surface: SmoothSurface,
    filter: ContactFilter,
    demography: &Demography,
    grid: &AgeGrid,
) -> Result<ContactEstimate> {
    let w = demography.band_population(SURFACE_BANDS)?;
    let raw = evaluate_surface(&surface, SURFACE_BANDS)?;
    let symmetric = symmetrize_reciprocal(&raw, &w)?;
    let rates = contact_rates_on_grid(&symmetric, &w, grid)?;
    Ok(ContactEstimate {
        filter,
        surface,
        raw,
        symmetric,
        band_population: w,
        rates,
    })
}

/// One fitted candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateFit {
    pub name: String,
    pub candidate: CandidateModel,
    pub fit: TransmissionFit,
    pub warnings: Vec<String>,
}

/// Fits one candidate given the contact estimates it may need.
pub fn fit_candidate(
    candidate: &CandidateModel,
    contacts: &[ContactEstimate],
    serology: &SerologyDataset,
    demography: &Demography,
    grid: &AgeGrid,
) -> Result<CandidateFit> {
    let (fit, warnings, candidate) = match candidate {
        CandidateModel::Pattern(p) => {
            let fit = fit_mixing_pattern(p, serology, demography, grid)?;
            let mut warnings = Vec::new();
            if !fit.identifiable {
                warnings.push(format!(
                    "information matrix is near-singular (condition {:.3e}); parameters are not identifiable",
                    fit.information_condition
                ));
            }
            (fit, warnings, candidate.clone())
        }
        CandidateModel::Proportional { filter, model } => {
            let est = contacts
                .iter()
                .find(|c| c.filter == *filter)
                .ok_or_else(|| Error::InvalidInput(format!("no contact estimate for filter {filter}")))?;
            let f = fit_proportionality(model, &est.rates, serology, demography, grid)?;
            let fitted = CandidateModel::Proportional {
                filter: *filter,
                model: f.model,
            };
            (f.fit, f.warnings, fitted)
        }
    };
    Ok(CandidateFit {
        name: candidate.to_string(),
        candidate,
        fit,
        warnings,
    })
}

/// The distinct contact filters a candidate list needs.
pub fn required_filters(candidates: &[CandidateModel]) -> Vec<ContactFilter> {
    let mut f: Vec<ContactFilter> = candidates.iter().filter_map(CandidateModel::filter).collect();
    f.sort();
    f.dedup();
    f
}

/// Fits every candidate; a failed fit is returned as its error, never fatal
/// to the others.
pub fn fit_candidates(
    candidates: &[CandidateModel],
    contacts: &[ContactEstimate],
    serology: &SerologyDataset,
    demography: &Demography,
    grid: &AgeGrid,
    schedule: Schedule,
) -> Vec<Result<CandidateFit>> {
    map_indexed(schedule, candidates.len(), |i| {
        fit_candidate(&candidates[i], contacts, serology, demography, grid)
    })
}
