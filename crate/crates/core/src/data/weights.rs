//! Post-stratification diary weights on age band x household size cells.

use std::collections::HashMap;

use super::{ContactSurvey, HouseholdCensus};
use crate::error::{Error, Result};

/// Ten-year age bands `0-9, ..., 60-69, 70+`.
pub const AGE_BANDS: usize = 8;
/// Household sizes `1, 2, 3, 4, 5+`.
pub const MAX_HOUSEHOLD_CLASS: usize = 5;

/// Weighting cell `(age band, household class)` for an age and household size.
pub fn weighting_cell(age: f64, household_size: usize) -> (usize, usize) {
    let band = ((age.max(0.0) / 10.0).floor() as usize).min(AGE_BANDS - 1);
    let size = household_size.clamp(1, MAX_HOUSEHOLD_CLASS);
    (band, size - 1)
}

/// Weight = census share of the participant's cell over its survey share,
/// rescaled to mean 1. A cell with no census population falls back to the
/// ratio of age-band margins.
pub fn compute_diary_weights(survey: &ContactSurvey, census: &HouseholdCensus) -> Result<ContactSurvey> {
    let n = survey.participants.len();
    let mut out = survey.clone();
    if n == 0 {
        return Ok(out);
    }
    let mut census_cell = [[0.0f64; MAX_HOUSEHOLD_CLASS]; AGE_BANDS];
    for (age, row) in census.counts.iter().enumerate() {
        for (k, &count) in row.iter().enumerate() {
            let (b, h) = weighting_cell(age as f64, k + 1);
            census_cell[b][h] += count;
        }
    }
    let census_total: f64 = census_cell.iter().flatten().sum();
    if !(census_total > 0.0) {
        return Err(Error::InvalidInput("census has no population".into()));
    }
    let census_band: Vec<f64> = census_cell.iter().map(|r| r.iter().sum()).collect();

    let mut survey_cell: HashMap<(usize, usize), usize> = HashMap::new();
    let mut survey_band = [0usize; AGE_BANDS];
    let cells: Vec<(usize, usize)> = survey
        .participants
        .iter()
        .map(|p| weighting_cell(p.age, p.household_size as usize))
        .collect();
    for &(b, h) in &cells {
        *survey_cell.entry((b, h)).or_default() += 1;
        survey_band[b] += 1;
    }

    let nf = n as f64;
    for (p, &(b, h)) in out.participants.iter_mut().zip(&cells) {
        p.weight = if census_cell[b][h] > 0.0 {
            (census_cell[b][h] / census_total) / (survey_cell[&(b, h)] as f64 / nf)
        } else if census_band[b] > 0.0 {
            (census_band[b] / census_total) / (survey_band[b] as f64 / nf)
        } else {
            return Err(Error::InvalidInput(format!(
                "census has no population in age band {} for participant {}",
                b, p.id
            )));
        };
    }
    let mean = out.mean_weight();
    for p in &mut out.participants {
        p.weight /= mean;
    }
    Ok(out)
}
