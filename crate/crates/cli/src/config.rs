//! Run configuration read from a TOML file. Relative paths resolve against
//! the directory holding the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use serocontact::contact::SmoothingSettings;
use serocontact::data::{load_census, AgeGrid, ContactFilter, Demography, HouseholdCensus};
use serocontact::pipeline::CandidateModel;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: DataPaths,
    pub demography: DemographyConfig,
    pub model: ModelConfig,
    pub smoothing: SmoothingSettings,
    pub bootstrap: BootstrapConfig,
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub serology: Option<PathBuf>,
    pub participants: Option<PathBuf>,
    pub contacts: Option<PathBuf>,
    pub census: Option<PathBuf>,
}

/// Overrides of the Belgian 2003 constants.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemographyConfig {
    pub population_total: Option<f64>,
    pub life_expectancy: Option<f64>,
    /// Days.
    pub infectious_days: Option<f64>,
    pub maternal_antibody_age: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: Vec<f64>,
    /// Contact filter used by `smooth-contacts` and by M-models.
    pub filter: String,
    pub candidates: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid: AgeGrid::school_classes().breaks().to_vec(),
            filter: "C1".into(),
            candidates: vec!["C1".into()],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub jitter: bool,
    pub resample: bool,
    /// Reselect smoothing parameters in every replicate instead of reusing
    /// those of the point estimate.
    pub reselect_smoothing: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            level: 0.95,
            jitter: true,
            resample: true,
            reselect_smoothing: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Constant prevalence.
    pub prevalence: Option<f64>,
    /// Piecewise-constant force of infection on `model.grid`.
    pub foi: Option<Vec<f64>>,
    /// Records per one-year age group.
    pub n_per_age: Option<usize>,
    /// Total records, spread in proportion to the population.
    pub n: Option<usize>,
    /// `[lo, hi)` in whole years.
    pub age_range: Option<[u32; 2]>,
    /// Existing serology to append to.
    pub augment: Option<PathBuf>,
    /// Final size in augment mode; omitted, the new range is sampled at the
    /// density of the existing records.
    pub total: Option<usize>,
    pub output: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.out);
        fix(&mut self.data.serology);
        fix(&mut self.data.participants);
        fix(&mut self.data.contacts);
        fix(&mut self.data.census);
        fix(&mut self.simulate.augment);
        fix(&mut self.simulate.output);
    }

    pub fn grid(&self) -> Result<AgeGrid, CliError> {
        AgeGrid::new(self.model.grid.clone()).map_err(|e| usage(e.to_string()))
    }

    pub fn filter(&self) -> Result<ContactFilter, CliError> {
        self.model.filter.parse().map_err(usage)
    }

    pub fn candidates(&self) -> Result<Vec<CandidateModel>, CliError> {
        if self.model.candidates.is_empty() {
            return Err(usage("model.candidates is empty"));
        }
        let filter = self.filter()?;
        self.model
            .candidates
            .iter()
            .map(|m| CandidateModel::parse(m, filter).map_err(|e| usage(e.to_string())))
            .collect()
    }

    pub fn smoothing(&self) -> Result<SmoothingSettings, CliError> {
        if self.smoothing.basis_dim < 4 {
            return Err(usage(format!(
                "smoothing.basis_dim must be at least 4, got {}",
                self.smoothing.basis_dim
            )));
        }
        Ok(self.smoothing.clone())
    }

    pub fn census(&self) -> Result<Option<HouseholdCensus>, CliError> {
        match &self.data.census {
            Some(p) => Ok(Some(load_census(existing(p, "census")?)?)),
            None => Ok(None),
        }
    }

    /// Belgian constants with any overrides; the census, when given,
    /// supplies the age distribution.
    pub fn demography(&self, census: Option<&HouseholdCensus>) -> Result<Demography, CliError> {
        let base = Demography::belgium_2003();
        let o = &self.demography;
        let n = o.population_total.unwrap_or(base.population_total);
        let l = o.life_expectancy.unwrap_or(base.life_expectancy);
        let d = o.infectious_days.map_or(base.infectious_duration, |x| x / 365.0);
        let a = o.maternal_antibody_age.unwrap_or(base.maternal_antibody_age);
        let bands = base.population_by_age.len();
        let demography = Demography::new(n, l, d, a, vec![n / l; bands]).map_err(|e| usage(e.to_string()))?;
        match census {
            Some(c) => Ok(demography.with_census(c.clone())?),
            None => Ok(demography),
        }
    }

    pub fn path<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
        let p = p
            .as_deref()
            .ok_or_else(|| usage(format!("no {what} path given (set data.{what} in the config)")))?;
        existing(p, what)
    }
}

pub fn existing<'a>(p: &'a Path, what: &str) -> Result<&'a Path, CliError> {
    if p.exists() {
        Ok(p)
    } else {
        Err(usage(format!("{what} file {} does not exist", p.display())))
    }
}
