//! Domain types shared by every stage of the pipeline: demography, age
//! grids, serology samples and the contact diary survey.

mod io;
mod weights;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_census, load_contact_survey, load_serology, write_census, write_contacts,
    write_participants, write_serology,
};
pub use weights::{compute_diary_weights, weighting_cell, AGE_BANDS, MAX_HOUSEHOLD_CLASS};

/// Participants reporting more contacts than this are treated as outliers.
pub const OUTLIER_CONTACTS: usize = 1000;

/// Population constants under type I mortality and type I maternal
/// antibodies, plus the one-year age distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demography {
    pub population_total: f64,
    pub life_expectancy: f64,
    pub infectious_duration: f64,
    pub maternal_antibody_age: f64,
    /// Population per one-year band starting at age 0.
    pub population_by_age: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub household: Option<HouseholdCensus>,
}

impl Demography {
    pub fn new(
        population_total: f64,
        life_expectancy: f64,
        infectious_duration: f64,
        maternal_antibody_age: f64,
        population_by_age: Vec<f64>,
    ) -> Result<Self> {
        let d = Demography {
            population_total,
            life_expectancy,
            infectious_duration,
            maternal_antibody_age,
            population_by_age,
            household: None,
        };
        d.validate()?;
        Ok(d)
    }

    /// Belgium 2003: N = 9 943 749 aged 0-80, L = 80, D = 7 days, A = 6
    /// months. The age distribution is the stationary one implied by type I
    /// mortality (flat), extended to the 101 contact-survey bands.
    pub fn belgium_2003() -> Self {
        let n = 9_943_749.0;
        let l = 80.0;
        Demography {
            population_total: n,
            life_expectancy: l,
            infectious_duration: 7.0 / 365.0,
            maternal_antibody_age: 0.5,
            population_by_age: vec![n / l; 101],
            household: None,
        }
    }

    /// Replaces the age distribution with census counts. The population
    /// total becomes the census total over `[0, L)`.
    pub fn with_census(mut self, census: HouseholdCensus) -> Result<Self> {
        self.population_by_age = census.population_by_age();
        let l = self.life_expectancy.ceil() as usize;
        self.population_total = self.population_by_age.iter().take(l).sum();
        self.household = Some(census);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.population_total > 0.0) {
            return bad("population total must be positive");
        }
        if !(self.life_expectancy > 0.0) {
            return bad("life expectancy must be positive");
        }
        if !(self.infectious_duration > 0.0 && self.infectious_duration < 1.0) {
            return bad("infectious duration must lie in (0, 1) years");
        }
        if !(self.maternal_antibody_age >= 0.0 && self.maternal_antibody_age < self.life_expectancy) {
            return bad("maternal antibody age must lie in [0, L)");
        }
        if !self.population_by_age.is_empty() {
            if self.population_by_age.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return bad("population counts must be finite and non-negative");
            }
            let l = self.life_expectancy.ceil() as usize;
            let within: f64 = self.population_by_age.iter().take(l).sum();
            let tol = 1.0f64.max(1e-6 * self.population_total) + 0.5 * l as f64;
            if (within - self.population_total).abs() > tol {
                return Err(Error::InvalidInput(format!(
                    "population by age sums to {within} over [0, {}) but N = {}",
                    self.life_expectancy, self.population_total
                )));
            }
        }
        Ok(())
    }

    /// The constant `N D / L` of the mass-action force of infection.
    pub fn mass_action_constant(&self) -> f64 {
        self.population_total * self.infectious_duration / self.life_expectancy
    }

    /// Population in one-year bands `0..bands`; errors on a zero band.
    pub fn band_population(&self, bands: usize) -> Result<Vec<f64>> {
        (0..bands)
            .map(|b| match self.population_by_age.get(b) {
                Some(&w) if w > 0.0 => Ok(w),
                _ => Err(Error::ZeroPopulation(b)),
            })
            .collect()
    }

    /// Checks that a transmission grid spans exactly `[A, L]`.
    pub fn check_grid(&self, grid: &AgeGrid) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        if !close(grid.lower(), self.maternal_antibody_age) || !close(grid.upper(), self.life_expectancy) {
            return Err(Error::GridMismatch(format!(
                "grid spans [{}, {}] but demography requires [{}, {}]",
                grid.lower(),
                grid.upper(),
                self.maternal_antibody_age,
                self.life_expectancy
            )));
        }
        Ok(())
    }
}

/// Census counts by one-year age and household size.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HouseholdCensus {
    /// `counts[age][size - 1]`.
    pub counts: Vec<Vec<f64>>,
}

impl HouseholdCensus {
    pub fn add(&mut self, age: usize, household_size: usize, count: f64) {
        if self.counts.len() <= age {
            self.counts.resize(age + 1, Vec::new());
        }
        let row = &mut self.counts[age];
        if row.len() < household_size {
            row.resize(household_size, 0.0);
        }
        row[household_size - 1] += count;
    }

    pub fn get(&self, age: usize, household_size: usize) -> f64 {
        self.counts
            .get(age)
            .and_then(|r| r.get(household_size.wrapping_sub(1)))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn population_by_age(&self) -> Vec<f64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().flatten().sum()
    }
}

/// Strictly increasing age breakpoints `a_1 < ... < a_{J+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AgeGrid {
    breaks: Vec<f64>,
}

impl AgeGrid {
    pub fn new(breaks: Vec<f64>) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(Error::InvalidInput("an age grid needs at least two breakpoints".into()));
        }
        if breaks.iter().any(|b| !b.is_finite()) || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "age breakpoints must be finite and strictly increasing: {breaks:?}"
            )));
        }
        Ok(AgeGrid { breaks })
    }

    /// `(0.5,2), [2,6), [6,12), [12,19), [19,31), [31,80)`: the school-system classes.
    pub fn school_classes() -> Self {
        AgeGrid {
            breaks: vec![0.5, 2.0, 6.0, 12.0, 19.0, 31.0, 80.0],
        }
    }

    /// One-year bands `[start, start+1), ..., [end-1, end)`.
    pub fn one_year(start: u32, end: u32) -> Result<Self> {
        AgeGrid::new((start..=end).map(f64::from).collect())
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn n_classes(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn lower(&self) -> f64 {
        self.breaks[0]
    }

    pub fn upper(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.breaks[j + 1] - self.breaks[j]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.breaks.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        0.5 * (self.breaks[j] + self.breaks[j + 1])
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n_classes()).map(|j| self.midpoint(j)).collect()
    }

    /// Class containing `a`; the upper endpoint belongs to the last class.
    pub fn class_of(&self, a: f64) -> Option<usize> {
        if !(a >= self.lower() && a <= self.upper()) {
            return None;
        }
        let j = self.breaks.partition_point(|&b| b <= a);
        Some(j.saturating_sub(1).min(self.n_classes() - 1))
    }

    /// Length of the overlap between class `j` and `[lo, hi)`.
    pub fn overlap(&self, j: usize, lo: f64, hi: f64) -> f64 {
        (self.breaks[j + 1].min(hi) - self.breaks[j].max(lo)).max(0.0)
    }

    pub fn labels(&self) -> Vec<String> {
        self.breaks
            .windows(2)
            .map(|w| format!("[{},{})", w[0], w[1]))
            .collect()
    }
}

impl TryFrom<Vec<f64>> for AgeGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        AgeGrid::new(v)
    }
}

impl From<AgeGrid> for Vec<f64> {
    fn from(g: AgeGrid) -> Self {
        g.breaks
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerologySample {
    pub id: String,
    pub age: f64,
    pub immune: bool,
    /// False when only the integer age was reported.
    pub age_known_exactly: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SerologyDataset {
    pub samples: Vec<SerologySample>,
    /// Rows dropped because the subject was still protected (age <= A).
    pub excluded_below_min: usize,
    /// Rows dropped because the subject is at or beyond L.
    pub excluded_above_max: usize,
}

impl SerologyDataset {
    pub fn new(samples: Vec<SerologySample>) -> Self {
        SerologyDataset {
            samples,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn immune_fraction(&self) -> f64 {
        self.samples.iter().filter(|s| s.immune).count() as f64 / self.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Closeness {
    Close,
    NonClose,
}

/// Diary duration categories, in increasing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Duration {
    #[serde(rename = "lt5m")]
    Under5Min,
    #[serde(rename = "m5_15")]
    Min5To15,
    #[serde(rename = "m15_60")]
    Min15To60,
    #[serde(rename = "h1_4")]
    Hour1To4,
    #[serde(rename = "gt4h")]
    Over4Hours,
}

impl Duration {
    pub const ALL: [Duration; 5] = [
        Duration::Under5Min,
        Duration::Min5To15,
        Duration::Min15To60,
        Duration::Hour1To4,
        Duration::Over4Hours,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Duration::Under5Min => "lt5m",
            Duration::Min5To15 => "m5_15",
            Duration::Min15To60 => "m15_60",
            Duration::Hour1To4 => "h1_4",
            Duration::Over4Hours => "gt4h",
        }
    }
}

impl FromStr for Duration {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Duration::ALL
            .into_iter()
            .find(|d| d.code() == s)
            .ok_or_else(|| format!("unknown duration category {s:?}"))
    }
}

impl Closeness {
    pub fn code(self) -> &'static str {
        match self {
            Closeness::Close => "close",
            Closeness::NonClose => "nonclose",
        }
    }
}

impl FromStr for Closeness {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "close" => Ok(Closeness::Close),
            "nonclose" => Ok(Closeness::NonClose),
            _ => Err(format!("unknown closeness {s:?}")),
        }
    }
}

impl DayType {
    pub fn code(self) -> &'static str {
        match self {
            DayType::Weekday => "weekday",
            DayType::Weekend => "weekend",
        }
    }
}

impl FromStr for DayType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "weekday" => Ok(DayType::Weekday),
            "weekend" => Ok(DayType::Weekend),
            _ => Err(format!("unknown day type {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub age_low: f64,
    pub age_high: f64,
    pub closeness: Closeness,
    pub duration: Duration,
}

impl Contact {
    /// Point value used for tabulation: the midpoint of the reported range.
    pub fn age_point(&self) -> f64 {
        0.5 * (self.age_low + self.age_high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub age: f64,
    pub age_known_exactly: bool,
    pub household_size: u32,
    pub day_type: DayType,
    pub weight: f64,
    pub contacts: Vec<Contact>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactSurvey {
    pub participants: Vec<Participant>,
    /// Contacts dropped because neither age bound was reported.
    pub dropped_missing_age: usize,
    /// Ids of participants excluded under the outlier rule.
    pub excluded_outliers: Vec<String>,
}

impl ContactSurvey {
    pub fn n_contacts(&self) -> usize {
        self.participants.iter().map(|p| p.contacts.len()).sum()
    }

    pub fn mean_weight(&self) -> f64 {
        self.participants.iter().map(|p| p.weight).sum::<f64>() / self.participants.len().max(1) as f64
    }
}

/// Contact-type definitions of increasing specificity for transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContactFilter {
    /// All contacts.
    C1,
    /// Close contacts.
    C2,
    /// Close contacts longer than 15 minutes.
    C3,
    /// Close contacts, and non-close contacts longer than 1 hour.
    C4,
    /// Close contacts longer than 15 minutes, and non-close longer than 1 hour.
    C5,
}

impl ContactFilter {
    pub const ALL: [ContactFilter; 5] = [
        ContactFilter::C1,
        ContactFilter::C2,
        ContactFilter::C3,
        ContactFilter::C4,
        ContactFilter::C5,
    ];

    pub fn keeps(self, c: &Contact) -> bool {
        let close = c.closeness == Closeness::Close;
        let over_15m = c.duration >= Duration::Min15To60;
        let over_1h = c.duration >= Duration::Hour1To4;
        match self {
            ContactFilter::C1 => true,
            ContactFilter::C2 => close,
            ContactFilter::C3 => close && over_15m,
            ContactFilter::C4 => close || over_1h,
            ContactFilter::C5 => (close && over_15m) || (!close && over_1h),
        }
    }
}

impl fmt::Display for ContactFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ContactFilter {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ContactFilter::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown contact filter {s:?}"))
    }
}

/// Restricts every participant's contacts; participants are kept even when
/// left with no contacts.
pub fn filter_contacts(survey: &ContactSurvey, filter: ContactFilter) -> ContactSurvey {
    let mut out = survey.clone();
    for p in &mut out.participants {
        p.contacts.retain(|c| filter.keeps(c));
    }
    out
}
