//! Social contact matrices: tabulation of diary counts, the smoothed
//! surface, reciprocity, conversion to per-capita rates and the saturated
//! baseline.

mod bspline;
mod gam;
mod saturated;

use nalgebra::DMatrix;

use crate::data::{AgeGrid, ContactSurvey};
use crate::error::{Error, Result};

pub use bspline::SplineBasis;
pub use gam::{
    evaluate_surface, fit_negbin_tensor_gam, DispersionChoice, LambdaChoice, SmoothSurface,
    SmoothingSettings, DISPERSION_BOUNDS,
};
pub use saturated::{saturated_contact_matrix, SaturatedFit};

/// One-year bands `[0,1), ..., [100,101)` used for the contact surface.
pub const SURFACE_BANDS: usize = 101;

/// Contacts of one participant by contact-age band.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRow {
    /// Respondent age band.
    pub band: usize,
    pub weight: f64,
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    pub n_bands: usize,
    pub rows: Vec<CountRow>,
}

impl CountTable {
    pub fn total_contacts(&self) -> u64 {
        self.rows
            .iter()
            .flat_map(|r| r.counts.iter())
            .map(|&c| u64::from(c))
            .sum()
    }
}

fn band_of(age: f64, n_bands: usize) -> usize {
    (age.max(0.0).floor() as usize).min(n_bands - 1)
}

/// Tabulates each participant's contacts by one-year contact-age band, using
/// the midpoint of the reported age interval. Ages past the last band are
/// counted in it.
pub fn build_count_table(survey: &ContactSurvey, n_bands: usize) -> CountTable {
    let rows = survey
        .participants
        .iter()
        .map(|p| {
            let mut counts = vec![0u32; n_bands];
            for c in &p.contacts {
                counts[band_of(c.age_point(), n_bands)] += 1;
            }
            CountRow {
                band: band_of(p.age, n_bands),
                weight: p.weight,
                counts,
            }
        })
        .collect();
    CountTable { n_bands, rows }
}

/// Mean daily contacts `m_ij` of a respondent in class `i` with persons in
/// class `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialContactMatrix {
    pub grid: AgeGrid,
    pub m: DMatrix<f64>,
}

/// Per-capita annual contact rates `c_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactRates {
    pub grid: AgeGrid,
    pub c: DMatrix<f64>,
}

fn check_population(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::GridMismatch(format!(
            "{} population bands for a {n}-class matrix",
            w.len()
        )));
    }
    match w.iter().position(|&x| !(x > 0.0)) {
        Some(i) => Err(Error::ZeroPopulation(i)),
        None => Ok(()),
    }
}

/// Projects `m` onto reciprocity: `m'_ij = (m_ij w_i + m_ji w_j) / (2 w_i)`.
pub fn symmetrize_reciprocal(m: &SocialContactMatrix, w: &[f64]) -> Result<SocialContactMatrix> {
    let n = m.m.nrows();
    check_population(w, n)?;
    let mut out = m.m.clone();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = (m.m[(i, j)] * w[i] + m.m[(j, i)] * w[j]) / (2.0 * w[i]);
        }
    }
    Ok(SocialContactMatrix {
        grid: m.grid.clone(),
        m: out,
    })
}

/// Largest violation of `m_ij w_i = m_ji w_j`, relative to the largest
/// total `m_ij w_i`.
pub fn reciprocity_residual(m: &SocialContactMatrix, w: &[f64]) -> f64 {
    let n = m.m.nrows();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let t = m.m[(i, j)] * w[i];
            scale = scale.max(t.abs());
            worst = worst.max((t - m.m[(j, i)] * w[j]).abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// `c_ij = 365 m_ji / w_i` on the grid of `m`.
pub fn contact_rates_from_matrix(m: &SocialContactMatrix, w: &[f64]) -> Result<ContactRates> {
    let n = m.m.nrows();
    check_population(w, n)?;
    let c = DMatrix::from_fn(n, n, |i, j| 365.0 * m.m[(j, i)] / w[i]);
    Ok(ContactRates {
        grid: m.grid.clone(),
        c,
    })
}

/// Aggregates a one-year matrix onto coarser classes by population-weighted
/// averaging, splitting bands that straddle a class boundary in proportion
/// to the overlap. Returns the coarse matrix and class populations.
pub fn aggregate_matrix(
    m: &SocialContactMatrix,
    w: &[f64],
    coarse: &AgeGrid,
) -> Result<(SocialContactMatrix, Vec<f64>)> {
    let n = m.m.nrows();
    check_population(w, n)?;
    let fine = &m.grid;
    if coarse.lower() < fine.lower() || coarse.upper() > fine.upper() {
        return Err(Error::GridMismatch(format!(
            "classes [{}, {}] exceed the matrix range [{}, {}]",
            coarse.lower(),
            coarse.upper(),
            fine.lower(),
            fine.upper()
        )));
    }
    let jn = coarse.n_classes();
    let b = coarse.breaks();
    // f[i][J]: share of fine band i falling in coarse class J
    let f: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..jn)
                .map(|cj| fine.overlap(i, b[cj], b[cj + 1]) / fine.width(i))
                .collect()
        })
        .collect();
    let pop: Vec<f64> = (0..jn)
        .map(|ci| (0..n).map(|i| f[i][ci] * w[i]).sum())
        .collect();
    if let Some(ci) = pop.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::ZeroPopulation(ci));
    }
    // row sums over each coarse contact class first
    let mut partial = DMatrix::<f64>::zeros(n, jn);
    for i in 0..n {
        for j in 0..n {
            let v = m.m[(i, j)];
            for cj in 0..jn {
                if f[j][cj] > 0.0 {
                    partial[(i, cj)] += f[j][cj] * v;
                }
            }
        }
    }
    let mut out = DMatrix::<f64>::zeros(jn, jn);
    for ci in 0..jn {
        for cj in 0..jn {
            let s: f64 = (0..n).map(|i| f[i][ci] * w[i] * partial[(i, cj)]).sum();
            out[(ci, cj)] = s / pop[ci];
        }
    }
    Ok((
        SocialContactMatrix {
            grid: coarse.clone(),
            m: out,
        },
        pop,
    ))
}

/// Per-capita rates on `grid` from a one-year matrix: aggregate, then convert.
pub fn contact_rates_on_grid(m: &SocialContactMatrix, w: &[f64], grid: &AgeGrid) -> Result<ContactRates> {
    let (coarse, pop) = aggregate_matrix(m, w, grid)?;
    contact_rates_from_matrix(&coarse, &pop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Closeness, Contact, DayType, Duration, Participant};

    fn contact(lo: f64, hi: f64) -> Contact {
        Contact {
            age_low: lo,
            age_high: hi,
            closeness: Closeness::Close,
            duration: Duration::Hour1To4,
        }
    }

    fn survey() -> ContactSurvey {
        let p = |id: &str, age: f64, contacts: Vec<Contact>| Participant {
            id: id.into(),
            age,
            age_known_exactly: false,
            household_size: 2,
            day_type: DayType::Weekday,
            weight: 1.0,
            contacts,
        };
        ContactSurvey {
            participants: vec![
                p("a", 10.0, vec![contact(10.0, 10.0), contact(10.0, 10.0), contact(25.0, 25.0)]),
                p("b", 50.0, vec![]),
                p("c", 30.0, vec![contact(20.0, 30.0)]),
            ],
            ..Default::default()
        }
    }

    fn mat(n: usize, v: &[f64]) -> SocialContactMatrix {
        SocialContactMatrix {
            grid: AgeGrid::one_year(0, n as u32).unwrap(),
            m: DMatrix::from_row_slice(n, n, v),
        }
    }

    #[test]
    fn tabulation_examples() {
        let t = build_count_table(&survey(), SURFACE_BANDS);
        assert_eq!(t.rows[0].band, 10);
        assert_eq!(t.rows[0].counts[10], 2);
        assert_eq!(t.rows[0].counts[25], 1);
        assert_eq!(t.rows[0].counts.iter().sum::<u32>(), 3);
        assert!(t.rows[1].counts.iter().all(|&c| c == 0));
        assert_eq!(t.rows[2].counts[25], 1);
        assert_eq!(t.total_contacts(), 4);
    }

    #[test]
    fn symmetrize_examples() {
        let m = mat(2, &[1.0, 4.0, 2.0, 1.0]);
        let s = symmetrize_reciprocal(&m, &[100.0, 100.0]).unwrap();
        assert!((s.m[(0, 1)] - 3.0).abs() < 1e-15 && (s.m[(1, 0)] - 3.0).abs() < 1e-15);
        let s = symmetrize_reciprocal(&m, &[100.0, 200.0]).unwrap();
        assert!((s.m[(0, 1)] - 4.0).abs() < 1e-15 && (s.m[(1, 0)] - 2.0).abs() < 1e-15);
        let again = symmetrize_reciprocal(&s, &[100.0, 200.0]).unwrap();
        assert_eq!(again.m, s.m);
        assert!(symmetrize_reciprocal(&m, &[100.0, 0.0]).is_err());
    }

    #[test]
    fn rate_examples() {
        let c = contact_rates_from_matrix(&mat(1, &[1.0]), &[365.0]).unwrap();
        assert!((c.c[(0, 0)] - 1.0).abs() < 1e-15);
        let c = contact_rates_from_matrix(&mat(2, &[0.0, 0.0, 2.0, 0.0]), &[1e6, 1.0]).unwrap();
        assert!((c.c[(0, 1)] - 7.3e-4).abs() < 1e-15);
        // reciprocal m gives symmetric per-capita rates
        let w = [100.0, 300.0];
        let s = symmetrize_reciprocal(&mat(2, &[3.0, 6.0, 1.0, 4.0]), &w).unwrap();
        let c = contact_rates_from_matrix(&s, &w).unwrap();
        assert!((c.c[(0, 1)] - c.c[(1, 0)]).abs() < 1e-12);
    }

    #[test]
    fn aggregation_preserves_reciprocity_and_totals() {
        let n = 10;
        let w: Vec<f64> = (0..n).map(|i| 50.0 + 7.0 * i as f64).collect();
        let raw = mat(n, &(0..n * n).map(|k| 1.0 + ((k * 37) % 11) as f64).collect::<Vec<_>>());
        let s = symmetrize_reciprocal(&raw, &w).unwrap();
        let coarse = AgeGrid::new(vec![0.5, 2.0, 6.0, 10.0]).unwrap();
        let (agg, pop) = aggregate_matrix(&s, &w, &coarse).unwrap();
        assert!((pop[0] - 0.5 * w[0] - w[1]).abs() < 1e-12);
        assert!(reciprocity_residual(&agg, &pop) < 1e-12);
        // a constant matrix stays constant after aggregation
        let ones = mat(n, &vec![1.0; n * n]);
        let (agg, _) = aggregate_matrix(&ones, &w, &coarse).unwrap();
        for cj in 0..3 {
            let share = coarse.width(cj);
            assert!((agg.m[(0, cj)] - share).abs() < 1e-12);
        }
    }
}
