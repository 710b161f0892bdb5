//! Synthetic serology: Bernoulli immune statuses under a prevalence curve,
//! with ages spread over one-year groups, and augmentation of an observed
//! sample with simulated records for an uncovered age range.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::contact::SocialContactMatrix;
use crate::data::{AgeGrid, Closeness, Contact, ContactSurvey, DayType, Duration, Participant, SerologyDataset, SerologySample};
use crate::error::{Error, Result};
use crate::foi::{prevalence_at_age, PiecewiseFoi};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrevalenceSpec {
    Constant(f64),
    Foi(PiecewiseFoi),
}

impl PrevalenceSpec {
    pub fn prevalence(&self, age: f64) -> Result<f64> {
        match self {
            PrevalenceSpec::Constant(p) => Ok(*p),
            PrevalenceSpec::Foi(f) => prevalence_at_age(f, age),
        }
    }

    fn check(&self) -> Result<()> {
        if let PrevalenceSpec::Constant(p) = self {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidInput(format!("prevalence {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Splits `n` over one-year groups `lo..hi` in proportion to `population`
/// (indexed by integer age), by largest remainder so the counts sum to `n`.
pub fn allocate_by_population(n: usize, lo: u32, hi: u32, population: &[f64]) -> Result<Vec<usize>> {
    if hi <= lo || hi as usize > population.len() {
        return Err(Error::InvalidInput(format!(
            "age range [{lo}, {hi}) not covered by {} population bands",
            population.len()
        )));
    }
    let pop = &population[lo as usize..hi as usize];
    let total: f64 = pop.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput(format!("no population in [{lo}, {hi})")));
    }
    let exact: Vec<f64> = pop.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        counts[k] += 1;
    }
    Ok(counts)
}

/// Ages drawn uniformly within each one-year group `lo + k`. Returns them
/// grouped, youngest first.
pub fn ages_from_counts<R: Rng + ?Sized>(lo: u32, counts: &[usize], rng: &mut R) -> Vec<f64> {
    let mut ages = Vec::with_capacity(counts.iter().sum());
    for (k, &c) in counts.iter().enumerate() {
        let base = f64::from(lo) + k as f64;
        ages.extend((0..c).map(|_| base + rng.random::<f64>()));
    }
    ages
}

/// One Bernoulli(π(age)) status per age. Ids are `{prefix}{index}`.
pub fn simulate_serology<R: Rng + ?Sized>(
    spec: &PrevalenceSpec,
    ages: &[f64],
    prefix: &str,
    rng: &mut R,
) -> Result<SerologyDataset> {
    spec.check()?;
    let samples = ages
        .iter()
        .enumerate()
        .map(|(i, &age)| {
            let p = spec.prevalence(age)?;
            Ok(SerologySample {
                id: format!("{prefix}{}", i + 1),
                age,
                immune: rng.random::<f64>() < p,
                age_known_exactly: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SerologyDataset::new(samples))
}

/// How many simulated records augmentation appends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentSize {
    /// Grow the dataset to this many records.
    Total(usize),
    /// Sample the new range at the base data's records-per-capita over the
    /// ages it already covers below the new range.
    MatchDensity,
}

/// Appends simulated records with ages in `[lo, hi)`, one-year group
/// sizes proportional to `population`.
pub fn augment_serology<R: Rng + ?Sized>(
    base: &SerologyDataset,
    spec: &PrevalenceSpec,
    lo: u32,
    hi: u32,
    size: AugmentSize,
    population: &[f64],
    rng: &mut R,
) -> Result<SerologyDataset> {
    let added = match size {
        AugmentSize::Total(t) => t.checked_sub(base.len()).ok_or_else(|| {
            Error::InvalidInput(format!("target size {t} is below the {} existing records", base.len()))
        })?,
        AugmentSize::MatchDensity => {
            let below: Vec<&SerologySample> = base.samples.iter().filter(|s| s.age < f64::from(lo)).collect();
            let first = below.iter().map(|s| s.age).fold(f64::INFINITY, f64::min);
            if below.is_empty() {
                return Err(Error::EmptyDataset(format!("no records below age {lo} to match")));
            }
            let start = first.floor() as usize;
            let pop_below: f64 = population.iter().take(lo as usize).skip(start).sum();
            let pop_new: f64 = population.iter().take(hi as usize).skip(lo as usize).sum();
            (below.len() as f64 * pop_new / pop_below).round() as usize
        }
    };
    let counts = allocate_by_population(added, lo, hi, population)?;
    let ages = ages_from_counts(lo, &counts, rng);
    let extra = simulate_serology(spec, &ages, "sim-", rng)?;
    let mut out = base.clone();
    out.samples.extend(extra.samples);
    Ok(out)
}

/// Mean daily contacts `m(a, a')` on one-year bands, evaluated at band
/// midpoints.
pub fn contact_matrix_from_fn(n_bands: usize, log_mean: impl Fn(f64, f64) -> f64) -> Result<SocialContactMatrix> {
    let grid = AgeGrid::one_year(0, n_bands as u32)?;
    let m = DMatrix::from_fn(n_bands, n_bands, |i, j| log_mean(i as f64 + 0.5, j as f64 + 0.5).exp());
    Ok(SocialContactMatrix { grid, m })
}

/// Diary survey with one participant per entry of `participant_bands`.
/// Contacts with band `j` are negative binomial with mean `m[(band, j)]`
/// and dispersion `k`; ages are reported as whole years.
pub fn simulate_contact_survey<R: Rng + ?Sized>(
    truth: &SocialContactMatrix,
    participant_bands: &[usize],
    dispersion: f64,
    rng: &mut R,
) -> Result<ContactSurvey> {
    let n = truth.m.nrows();
    if !(dispersion > 0.0) {
        return Err(Error::InvalidInput(format!("dispersion {dispersion} must be positive")));
    }
    if let Some(b) = participant_bands.iter().find(|&&b| b >= n) {
        return Err(Error::InvalidInput(format!("participant band {b} outside {n} bands")));
    }
    let participants = participant_bands
        .iter()
        .enumerate()
        .map(|(i, &band)| {
            let mut contacts = Vec::new();
            for j in 0..n {
                let mean = truth.m[(band, j)];
                if !(mean > 0.0) {
                    continue;
                }
                let rate = Gamma::new(dispersion, mean / dispersion)
                    .map_err(|e| Error::InvalidInput(e.to_string()))?
                    .sample(rng);
                let y = if rate > 0.0 {
                    Poisson::new(rate).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(rng) as usize
                } else {
                    0
                };
                contacts.extend((0..y).map(|_| Contact {
                    age_low: j as f64,
                    age_high: j as f64 + 0.999,
                    closeness: Closeness::Close,
                    duration: Duration::Hour1To4,
                }));
            }
            Ok(Participant {
                id: format!("p{}", i + 1),
                age: band as f64,
                age_known_exactly: false,
                household_size: 1 + (i % 5) as u32,
                day_type: DayType::Weekday,
                weight: 1.0,
                contacts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContactSurvey {
        participants,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_prevalence_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ages: Vec<f64> = (0..10_000).map(|i| 1.0 + (i % 70) as f64).collect();
        let all = simulate_serology(&PrevalenceSpec::Constant(1.0), &ages[..500], "s", &mut rng).unwrap();
        assert!(all.samples.iter().all(|s| s.immune));
        let d = simulate_serology(&PrevalenceSpec::Constant(0.983), &ages, "s", &mut rng).unwrap();
        assert!((d.immune_fraction() - 0.983).abs() < 0.004);
        assert!(simulate_serology(&PrevalenceSpec::Constant(1.2), &ages, "s", &mut rng).is_err());
    }

    #[test]
    fn survey_means_follow_truth() {
        let truth = contact_matrix_from_fn(3, |a, b| (1.0 + (a - b).abs()).ln()).unwrap();
        let bands: Vec<usize> = (0..3000).map(|i| i % 3).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = simulate_contact_survey(&truth, &bands, 4.0, &mut rng).unwrap();
        let mut sums = [[0.0; 3]; 3];
        for p in &s.participants {
            for c in &p.contacts {
                sums[p.age as usize][c.age_point() as usize] += 1.0 / 1000.0;
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((sums[i][j] / truth.m[(i, j)] - 1.0).abs() < 0.1, "{i},{j}");
            }
        }
    }

    #[test]
    fn allocation_sums_exactly() {
        let pop: Vec<f64> = (0..101).map(|a| 130_000.0 - 800.0 * a as f64).collect();
        let c = allocate_by_population(1207, 40, 80, &pop).unwrap();
        assert_eq!(c.len(), 40);
        assert_eq!(c.iter().sum::<usize>(), 1207);
        assert!(c[0] >= c[39]);
    }

    #[test]
    fn augment_to_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ages: Vec<f64> = (0..2649).map(|i| 0.6 + 39.0 * i as f64 / 2649.0).collect();
        let base = simulate_serology(&PrevalenceSpec::Constant(0.5), &ages, "b", &mut rng).unwrap();
        let pop = vec![124_297.0; 101];
        let out = augment_serology(&base, &PrevalenceSpec::Constant(0.983), 40, 80, AugmentSize::Total(3856), &pop, &mut rng)
            .unwrap();
        assert_eq!(out.len(), 3856);
        assert!(out.samples[2649..].iter().all(|s| (40.0..80.0).contains(&s.age)));
        let dense = augment_serology(&base, &PrevalenceSpec::Constant(0.983), 40, 80, AugmentSize::MatchDensity, &pop, &mut rng)
            .unwrap();
        // 2649 records over [0, 40) in a flat population
        assert_eq!(dense.len() - 2649, 2649);
    }
}
