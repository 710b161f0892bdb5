//! Information-criterion model comparison: Akaike weights, evidence ratios
//! and model-averaged R0, also within each bootstrap replicate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{percentile_ci, Interval};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFitSummary {
    pub name: String,
    /// Number of estimated parameters.
    pub k: usize,
    pub loglik: f64,
    pub aic: f64,
    #[serde(default)]
    pub bic: Option<f64>,
    #[serde(default)]
    pub r0: Option<f64>,
}

impl ModelFitSummary {
    pub fn new(name: impl Into<String>, k: usize, loglik: f64, n_obs: usize, r0: Option<f64>) -> Self {
        ModelFitSummary {
            name: name.into(),
            k,
            loglik,
            aic: aic(loglik, k),
            bic: Some(bic(loglik, k, n_obs)),
            r0,
        }
    }

    /// A summary known only by its AIC.
    pub fn from_aic(name: impl Into<String>, k: usize, aic: f64, r0: Option<f64>) -> Self {
        ModelFitSummary {
            name: name.into(),
            k,
            loglik: -0.5 * (aic - 2.0 * k as f64),
            aic,
            bic: None,
            r0,
        }
    }
}

pub fn aic(loglik: f64, k: usize) -> f64 {
    -2.0 * loglik + 2.0 * k as f64
}

pub fn bic(loglik: f64, k: usize, n: usize) -> f64 {
    -2.0 * loglik + k as f64 * (n as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AkaikeRow {
    pub summary: ModelFitSummary,
    pub delta: f64,
    pub weight: f64,
    /// Best model's weight over this model's weight.
    pub evidence_ratio: f64,
}

/// AIC differences, Akaike weights and evidence ratios, in input order.
pub fn akaike_table(summaries: &[ModelFitSummary]) -> Result<Vec<AkaikeRow>> {
    if summaries.is_empty() {
        return Err(Error::InvalidInput("no models to compare".into()));
    }
    if let Some(s) = summaries.iter().find(|s| !s.aic.is_finite()) {
        return Err(Error::InvalidInput(format!("model {} has non-finite AIC", s.name)));
    }
    let best = summaries.iter().map(|s| s.aic).fold(f64::INFINITY, f64::min);
    let rel: Vec<f64> = summaries.iter().map(|s| (-(s.aic - best) / 2.0).exp()).collect();
    let total: f64 = rel.iter().sum();
    let w_max = 1.0 / total;
    Ok(summaries
        .iter()
        .zip(&rel)
        .map(|(s, r)| {
            let weight = r / total;
            AkaikeRow {
                summary: s.clone(),
                delta: s.aic - best,
                weight,
                evidence_ratio: w_max / weight,
            }
        })
        .collect())
}

/// `Σ w_k x_k` for weights that sum to one.
pub fn weighted_average(weights: &[f64], values: &[f64]) -> Result<f64> {
    if weights.len() != values.len() || weights.is_empty() {
        return Err(Error::InvalidInput("weights and values must have the same non-zero length".into()));
    }
    Ok(weights.iter().zip(values).map(|(w, v)| w * v).sum())
}

/// Akaike-weighted average R0 over a table.
pub fn model_average_r0(table: &[AkaikeRow]) -> Result<f64> {
    let r0 = table
        .iter()
        .map(|r| {
            r.summary
                .r0
                .ok_or_else(|| Error::InvalidInput(format!("model {} has no R0", r.summary.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let w: Vec<f64> = table.iter().map(|r| r.weight).collect();
    weighted_average(&w, &r0)
}

/// One model's estimates in one bootstrap replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub index: usize,
    pub k: usize,
    pub loglik: f64,
    pub r0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedBootstrap {
    /// Replicate indices in increasing order.
    pub indices: Vec<usize>,
    pub averages: Vec<f64>,
    pub interval: Interval,
}

/// Per replicate, recomputes the Akaike weights from that replicate's fits
/// and averages its R0 values; the interval is the percentile interval of
/// those averages. Every model must carry the same replicate indices.
pub fn bootstrap_model_average(per_model: &[Vec<ReplicateFit>], level: f64) -> Result<AveragedBootstrap> {
    if per_model.is_empty() {
        return Err(Error::InvalidInput("no models to average".into()));
    }
    let mut by_index: Vec<BTreeMap<usize, ReplicateFit>> = Vec::with_capacity(per_model.len());
    for fits in per_model {
        let map: BTreeMap<usize, ReplicateFit> = fits.iter().map(|f| (f.index, *f)).collect();
        if map.len() != fits.len() {
            return Err(Error::InvalidInput("duplicate replicate index".into()));
        }
        by_index.push(map);
    }
    let indices: Vec<usize> = by_index[0].keys().copied().collect();
    if by_index.iter().any(|m| !m.keys().copied().eq(indices.iter().copied())) {
        return Err(Error::InvalidInput("models carry different replicate indices".into()));
    }
    let averages = indices
        .iter()
        .map(|i| {
            let summaries: Vec<ModelFitSummary> = by_index
                .iter()
                .enumerate()
                .map(|(m, map)| {
                    let f = map[i];
                    ModelFitSummary {
                        name: m.to_string(),
                        k: f.k,
                        loglik: f.loglik,
                        aic: aic(f.loglik, f.k),
                        bic: None,
                        r0: Some(f.r0),
                    }
                })
                .collect();
            model_average_r0(&akaike_table(&summaries)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let interval = percentile_ci(&averages, level)?;
    Ok(AveragedBootstrap {
        indices,
        averages,
        interval,
    })
}
