//! Nonparametric bootstrap over the contact survey and the serology, with
//! age randomisation, and percentile intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contact::SmoothingSettings;
use crate::data::{compute_diary_weights, AgeGrid, ContactSurvey, Demography, HouseholdCensus, SerologyDataset};
use crate::error::{Error, Result};
use crate::par::{map_indexed, Schedule};
use crate::pipeline::{estimate_contact_rates, fit_candidate, required_filters, CandidateModel, ContactEstimate};
use crate::selection::ReplicateFit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// Percentile interval with linear interpolation between order statistics
/// (the `(n - 1) p` rule, "type 7").
pub fn percentile_ci(values: &[f64], level: f64) -> Result<Interval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level {level} outside (0, 1)")));
    }
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{} replicate(s); a percentile interval needs at least 2",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite replicate value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(sorted.len() - 1);
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let tail = (1.0 - level) / 2.0;
    Ok(Interval {
        lower: q(tail),
        upper: q(1.0 - tail),
        level,
    })
}

/// Replaces integer-reported ages by uniform draws within the reported
/// year and contact ages by uniform draws within their reported range.
/// Serology ages stay inside `(min_age, max_age)`.
pub fn randomize_ages<R: Rng + ?Sized>(
    survey: &ContactSurvey,
    serology: &SerologyDataset,
    serology_range: (f64, f64),
    rng: &mut R,
) -> (ContactSurvey, SerologyDataset) {
    let mut s = survey.clone();
    for p in &mut s.participants {
        if !p.age_known_exactly {
            p.age += rng.random::<f64>();
        }
        for c in &mut p.contacts {
            let a = if c.age_high > c.age_low {
                rng.random_range(c.age_low..=c.age_high)
            } else {
                c.age_low
            };
            c.age_low = a;
            c.age_high = a;
        }
    }
    let mut d = serology.clone();
    for x in &mut d.samples {
        if !x.age_known_exactly {
            let a = x.age + rng.random::<f64>();
            if a > serology_range.0 && a < serology_range.1 {
                x.age = a;
            }
        }
    }
    (s, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub replicates: usize,
    pub seed: u64,
    pub models: Vec<CandidateModel>,
    /// Smoothing settings used in every replicate.
    pub smoothing: SmoothingSettings,
    pub grid: AgeGrid,
    pub level: f64,
    pub schedule: Schedule,
    /// Randomise reported ages (step 1).
    pub jitter: bool,
    /// Resample participants and serology (steps 2 and 5).
    pub resample: bool,
}

impl BootstrapSpec {
    pub fn new(replicates: usize, seed: u64, models: Vec<CandidateModel>, smoothing: SmoothingSettings) -> Self {
        BootstrapSpec {
            replicates,
            seed,
            models,
            smoothing,
            grid: AgeGrid::school_classes(),
            level: 0.95,
            schedule: Schedule::default(),
            jitter: true,
            resample: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidInput("bootstrap needs at least one replicate".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("confidence level {} outside (0, 1)", self.level)));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidInput("bootstrap needs at least one model".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimate {
    pub params: Vec<f64>,
    pub loglik: f64,
    pub k: usize,
    pub r0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub converged: bool,
    /// One entry per model when converged, empty otherwise.
    pub estimates: Vec<ModelEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub model_names: Vec<String>,
    pub replicates: Vec<ReplicateResult>,
    pub level: f64,
}

impl BootstrapRun {
    pub fn converged(&self) -> usize {
        self.replicates.iter().filter(|r| r.converged).count()
    }

    pub fn failed(&self) -> usize {
        self.replicates.len() - self.converged()
    }

    fn values(&self, model: usize, f: impl Fn(&ModelEstimate) -> f64) -> Vec<f64> {
        self.replicates
            .iter()
            .filter(|r| r.converged)
            .map(|r| f(&r.estimates[model]))
            .collect()
    }

    pub fn r0_values(&self, model: usize) -> Vec<f64> {
        self.values(model, |e| e.r0)
    }

    pub fn param_values(&self, model: usize, param: usize) -> Vec<f64> {
        self.values(model, |e| e.params[param])
    }

    pub fn r0_ci(&self, model: usize) -> Result<Interval> {
        percentile_ci(&self.r0_values(model), self.level)
    }

    pub fn param_ci(&self, model: usize, param: usize) -> Result<Interval> {
        percentile_ci(&self.param_values(model, param), self.level)
    }

    /// Converged replicates of one model, for model averaging.
    pub fn replicate_fits(&self, model: usize) -> Vec<ReplicateFit> {
        self.replicates
            .iter()
            .filter(|r| r.converged)
            .map(|r| {
                let e = &r.estimates[model];
                ReplicateFit {
                    index: r.index,
                    k: e.k,
                    loglik: e.loglik,
                    r0: e.r0,
                }
            })
            .collect()
    }
}

/// Generator of replicate `index`: a fixed stream of the master seed, so
/// results do not depend on execution order.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn resample<T: Clone, R: Rng + ?Sized>(items: &[T], rng: &mut R) -> Vec<T> {
    (0..items.len()).map(|_| items[rng.random_range(0..items.len())].clone()).collect()
}

fn one_replicate(
    spec: &BootstrapSpec,
    index: usize,
    survey: &ContactSurvey,
    serology: &SerologyDataset,
    census: Option<&HouseholdCensus>,
    demography: &Demography,
) -> Result<Vec<ModelEstimate>> {
    let mut rng = replicate_rng(spec.seed, index);
    let range = (demography.maternal_antibody_age, demography.life_expectancy);
    let (mut s, mut d) = if spec.jitter {
        randomize_ages(survey, serology, range, &mut rng)
    } else {
        (survey.clone(), serology.clone())
    };
    if spec.resample {
        s.participants = resample(&s.participants, &mut rng);
    }
    if let Some(census) = census {
        s = compute_diary_weights(&s, census)?;
    }
    let contacts = required_filters(&spec.models)
        .into_iter()
        .map(|f| estimate_contact_rates(&s, f, &spec.smoothing, demography, &spec.grid))
        .collect::<Result<Vec<ContactEstimate>>>()?;
    if spec.resample {
        d.samples = resample(&d.samples, &mut rng);
    }
    spec.models
        .iter()
        .map(|m| {
            let f = fit_candidate(m, &contacts, &d, demography, &spec.grid)?;
            Ok(ModelEstimate {
                params: f.fit.params,
                loglik: f.fit.loglik,
                k: f.fit.n_params,
                r0: f.fit.r0,
            })
        })
        .collect()
}

/// Runs the bootstrap. Each replicate randomises ages, resamples
/// participants, recomputes diary weights (when a census is given), refits
/// the contact surfaces, resamples the serology and refits every model.
/// Failed replicates are recorded, not fatal.
pub fn run_bootstrap(
    spec: &BootstrapSpec,
    survey: &ContactSurvey,
    serology: &SerologyDataset,
    census: Option<&HouseholdCensus>,
    demography: &Demography,
) -> Result<BootstrapRun> {
    spec.validate()?;
    let replicates = map_indexed(spec.schedule, spec.replicates, |index| {
        match one_replicate(spec, index, survey, serology, census, demography) {
            Ok(estimates) => ReplicateResult {
                index,
                converged: true,
                estimates,
                failure: None,
            },
            Err(e) => ReplicateResult {
                index,
                converged: false,
                estimates: Vec::new(),
                failure: Some(e.to_string()),
            },
        }
    });
    let run = BootstrapRun {
        model_names: spec.models.iter().map(ToString::to_string).collect(),
        replicates,
        level: spec.level,
    };
    if run.converged() == 0 {
        let reason = run.replicates[0].failure.clone().unwrap_or_default();
        return Err(Error::NonConvergence {
            what: format!("all {} bootstrap replicates (first: {reason})", spec.replicates),
            iterations: spec.replicates,
            residual: f64::NAN,
            best: Vec::new(),
        });
    }
    Ok(run)
}
