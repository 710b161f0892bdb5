//! WAIFW matrices, the discrete mass-action force-of-infection equations and
//! the traditional mixing-pattern structures.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{AgeGrid, Demography, SerologyDataset};
use crate::error::{Error, Result};
use crate::transmission::{fit_beta_model, BetaModel, FitOptions, TransmissionFit};

/// Per-capita annual effective contact rates `β_ij` between age classes:
/// the rate at which a person in class `j` makes effective contact with a
/// given person in class `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaifwMatrix {
    pub grid: AgeGrid,
    pub beta: DMatrix<f64>,
}

impl WaifwMatrix {
    pub fn new(grid: AgeGrid, beta: DMatrix<f64>) -> Result<Self> {
        let j = grid.n_classes();
        if beta.nrows() != j || beta.ncols() != j {
            return Err(Error::GridMismatch(format!(
                "{}x{} matrix for {j} age classes",
                beta.nrows(),
                beta.ncols()
            )));
        }
        if beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::InvalidInput("transmission rates must be finite and non-negative".into()));
        }
        Ok(WaifwMatrix { grid, beta })
    }
}

const DAMPING: f64 = 0.5;
const START: f64 = 0.1;
const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_MAX_ITER: usize = 10_000;

/// Right-hand side of the discrete force-of-infection equation,
/// `T(λ)_i = (ND/L) Σ_j β_ij [exp(-H_{j-1}) - exp(-H_j)]`.
pub(crate) fn foi_map(beta: &DMatrix<f64>, widths: &[f64], c: f64, lambda: &[f64], out: &mut [f64]) {
    let j = widths.len();
    let mut drop = vec![0.0; j];
    let mut h = 0.0f64;
    for k in 0..j {
        let before = (-h).exp();
        h += lambda[k] * widths[k];
        // x_{k-1} - x_k without cancellation
        drop[k] = -before * (-lambda[k] * widths[k]).exp_m1();
    }
    for i in 0..j {
        out[i] = c * (0..j).map(|k| beta[(i, k)] * drop[k]).sum::<f64>();
    }
}

/// Susceptible fraction at every breakpoint, `x_0 = 1, ..., x_J`.
pub(crate) fn susceptible_at_breaks(widths: &[f64], lambda: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(widths.len() + 1);
    let mut h = 0.0;
    x.push(1.0);
    for (w, l) in widths.iter().zip(lambda) {
        h += w * l;
        x.push((-h).exp());
    }
    x
}

/// Jacobian `∂T_i/∂λ_k` of the force-of-infection map.
pub(crate) fn foi_jacobian(beta: &DMatrix<f64>, widths: &[f64], c: f64, lambda: &[f64]) -> DMatrix<f64> {
    let j = widths.len();
    let x = susceptible_at_breaks(widths, lambda);
    // d[k][l] = ∂(x_{l} - x_{l+1}) / ∂λ_k  (class l, zero-based)
    let mut d = DMatrix::zeros(j, j);
    for l in 0..j {
        for k in 0..=l {
            d[(k, l)] = if k < l {
                widths[k] * (x[l + 1] - x[l])
            } else {
                widths[k] * x[l + 1]
            };
        }
    }
    let mut jac = DMatrix::zeros(j, j);
    for i in 0..j {
        for k in 0..j {
            jac[(i, k)] = c * (0..j).map(|l| beta[(i, l)] * d[(k, l)]).sum::<f64>();
        }
    }
    jac
}

fn residual(beta: &DMatrix<f64>, widths: &[f64], c: f64, lambda: &[f64], buf: &mut [f64]) -> f64 {
    foi_map(beta, widths, c, lambda, buf);
    lambda
        .iter()
        .zip(buf.iter())
        .map(|(l, t)| (t - l).abs())
        .fold(0.0, f64::max)
}

/// Solves the discrete mass-action equations for the piecewise-constant
/// force of infection by damped fixed-point iteration from `λ = 0.1`,
/// finished with Newton steps once the iteration is close.
pub fn solve_foi_fixed_point(waifw: &WaifwMatrix, demography: &Demography) -> Result<Vec<f64>> {
    demography.check_grid(&waifw.grid)?;
    solve_fixed_point_raw(&waifw.beta, &waifw.grid.widths(), demography.mass_action_constant())
}

pub(crate) fn solve_fixed_point_raw(beta: &DMatrix<f64>, widths: &[f64], c: f64) -> Result<Vec<f64>> {
    let j = widths.len();
    let mut lambda = vec![START; j];
    let mut t = vec![0.0; j];
    let mut res = f64::INFINITY;
    for it in 0..FIXED_POINT_MAX_ITER {
        res = residual(beta, widths, c, &lambda, &mut t);
        if !res.is_finite() {
            break;
        }
        if res < FIXED_POINT_TOL {
            return Ok(lambda);
        }
        if res < 1e-3 || it % 50 == 49 {
            if let Some((l, r)) = newton_polish(beta, widths, c, &lambda, res) {
                lambda = l;
                res = r;
                if res < FIXED_POINT_TOL {
                    return Ok(lambda);
                }
                continue;
            }
        }
        for k in 0..j {
            lambda[k] = (1.0 - DAMPING) * lambda[k] + DAMPING * t[k];
        }
    }
    Err(Error::NonConvergence {
        what: "force-of-infection fixed point".into(),
        iterations: FIXED_POINT_MAX_ITER,
        residual: res,
        best: lambda,
    })
}

/// Newton steps on `T(λ) - λ = 0`, kept only while they reduce the
/// residual and stay non-negative.
fn newton_polish(beta: &DMatrix<f64>, widths: &[f64], c: f64, start: &[f64], res0: f64) -> Option<(Vec<f64>, f64)> {
    let j = widths.len();
    let mut lambda = start.to_vec();
    let mut res = res0;
    let mut t = vec![0.0; j];
    let mut improved = false;
    for _ in 0..20 {
        foi_map(beta, widths, c, &lambda, &mut t);
        let mut a = foi_jacobian(beta, widths, c, &lambda);
        for i in 0..j {
            a[(i, i)] -= 1.0;
        }
        let rhs = nalgebra::DVector::from_iterator(j, (0..j).map(|i| lambda[i] - t[i]));
        let step = a.lu().solve(&rhs)?;
        let cand: Vec<f64> = (0..j).map(|i| (lambda[i] + step[i]).max(0.0)).collect();
        let r = residual(beta, widths, c, &cand, &mut t);
        if !(r < res) {
            break;
        }
        lambda = cand;
        res = r;
        improved = true;
        if res < FIXED_POINT_TOL {
            break;
        }
    }
    improved.then_some((lambda, res))
}

/// Structure of a WAIFW matrix in terms of shared parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MixingPattern {
    W1,
    W2,
    W3,
    W4,
    W5,
    W6,
    /// Zero-based parameter index per cell; `None` is a structural zero.
    Custom(Vec<Vec<Option<usize>>>),
}

impl MixingPattern {
    pub const STANDARD: [MixingPattern; 6] = [
        MixingPattern::W1,
        MixingPattern::W2,
        MixingPattern::W3,
        MixingPattern::W4,
        MixingPattern::W5,
        MixingPattern::W6,
    ];

    /// Parameter index (zero-based) of every cell.
    pub fn structure(&self) -> Vec<Vec<Option<usize>>> {
        let table = |rows: [[usize; 6]; 6]| -> Vec<Vec<Option<usize>>> {
            rows.iter()
                .map(|r| r.iter().map(|&p| Some(p - 1)).collect())
                .collect()
        };
        match self {
            MixingPattern::W1 | MixingPattern::W5 => {
                let last = if *self == MixingPattern::W1 { 6 } else { 5 };
                (0..6)
                    .map(|i| {
                        (0..6)
                            .map(|j| match (i == j, i) {
                                (true, 5) => Some(last - 1),
                                (true, _) => Some(i),
                                (false, _) => Some(5),
                            })
                            .collect()
                    })
                    .collect()
            }
            MixingPattern::W2 => table([
                [1, 1, 3, 4, 5, 6],
                [1, 2, 3, 4, 5, 6],
                [3, 3, 3, 4, 5, 6],
                [4, 4, 4, 4, 5, 6],
                [5, 5, 5, 5, 5, 6],
                [6, 6, 6, 6, 6, 6],
            ]),
            MixingPattern::W3 => table([
                [1, 1, 1, 4, 5, 6],
                [1, 2, 3, 4, 5, 6],
                [1, 3, 3, 4, 5, 6],
                [4, 4, 4, 4, 5, 6],
                [5, 5, 5, 5, 5, 6],
                [6, 6, 6, 6, 6, 6],
            ]),
            MixingPattern::W4 => (0..6).map(|i| vec![Some(i); 6]).collect(),
            MixingPattern::W6 => (0..6)
                .map(|i| (0..6).map(|j| (i == j).then_some(i)).collect())
                .collect(),
            MixingPattern::Custom(s) => s.clone(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.structure()
            .iter()
            .flatten()
            .flatten()
            .map(|&p| p + 1)
            .max()
            .unwrap_or(0)
    }

    /// Checks that the map is square and uses every index `0..P`.
    pub fn validate(&self) -> Result<()> {
        let s = self.structure();
        let j = s.len();
        if j == 0 || s.iter().any(|r| r.len() != j) {
            return Err(Error::InvalidInput("mixing pattern must be a non-empty square map".into()));
        }
        let p = self.n_params();
        let mut used = vec![false; p];
        for &q in s.iter().flatten().flatten() {
            used[q] = true;
        }
        if let Some(q) = used.iter().position(|u| !u) {
            return Err(Error::InvalidInput(format!("parameter {} never appears in the pattern", q + 1)));
        }
        Ok(())
    }

    /// Reads a custom structure from CSV text: one row per line, 1-based
    /// parameter indices, `0` for a structural zero.
    pub fn parse_custom(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|line| {
                line.split(',')
                    .map(|cell| {
                        let v: usize = cell.trim().parse().map_err(|_| {
                            Error::InvalidInput(format!("bad pattern cell {cell:?}"))
                        })?;
                        Ok(v.checked_sub(1))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let p = MixingPattern::Custom(rows);
        p.validate()?;
        Ok(p)
    }
}

impl fmt::Display for MixingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixingPattern::Custom(_) => f.write_str("custom"),
            other => write!(f, "{other:?}"),
        }
    }
}

impl FromStr for MixingPattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "W1" => Ok(MixingPattern::W1),
            "W2" => Ok(MixingPattern::W2),
            "W3" => Ok(MixingPattern::W3),
            "W4" => Ok(MixingPattern::W4),
            "W5" => Ok(MixingPattern::W5),
            "W6" => Ok(MixingPattern::W6),
            _ => Err(Error::InvalidInput(format!("unknown mixing pattern {s:?}"))),
        }
    }
}

/// Fills a WAIFW matrix from a pattern and its parameters.
pub fn build_waifw(pattern: &MixingPattern, params: &[f64], grid: &AgeGrid) -> Result<WaifwMatrix> {
    pattern.validate()?;
    if params.len() != pattern.n_params() {
        return Err(Error::InvalidInput(format!(
            "pattern {pattern} takes {} parameters, got {}",
            pattern.n_params(),
            params.len()
        )));
    }
    if let Some(p) = params.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::InvalidInput(format!("transmission parameter must be non-negative, got {p}")));
    }
    let s = pattern.structure();
    let beta = DMatrix::from_fn(s.len(), s.len(), |i, j| s[i][j].map_or(0.0, |p| params[p]));
    WaifwMatrix::new(grid.clone(), beta)
}

struct PatternModel {
    structure: Vec<Vec<Option<usize>>>,
    n_params: usize,
}

impl BetaModel for PatternModel {
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn nonnegative(&self, _: usize) -> bool {
        true
    }

    fn beta(&self, params: &[f64]) -> DMatrix<f64> {
        let j = self.structure.len();
        DMatrix::from_fn(j, j, |a, b| self.structure[a][b].map_or(0.0, |p| params[p]))
    }

    fn beta_derivative(&self, _: &[f64], p: usize) -> DMatrix<f64> {
        let j = self.structure.len();
        DMatrix::from_fn(j, j, |a, b| if self.structure[a][b] == Some(p) { 1.0 } else { 0.0 })
    }
}

/// Maximum-likelihood fit of a mixing pattern to serology under `β >= 0`.
pub fn fit_mixing_pattern(
    pattern: &MixingPattern,
    serology: &SerologyDataset,
    demography: &Demography,
    grid: &AgeGrid,
) -> Result<TransmissionFit> {
    pattern.validate()?;
    if pattern.structure().len() != grid.n_classes() {
        return Err(Error::GridMismatch(format!(
            "pattern {pattern} is {}x{} but the grid has {} classes",
            pattern.structure().len(),
            pattern.structure().len(),
            grid.n_classes()
        )));
    }
    let model = PatternModel {
        structure: pattern.structure(),
        n_params: pattern.n_params(),
    };
    fit_beta_model(&model, serology, demography, grid, &FitOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn belgium() -> (Demography, AgeGrid) {
        (Demography::belgium_2003(), AgeGrid::school_classes())
    }

    #[test]
    fn pattern_examples() {
        let grid = AgeGrid::school_classes();
        let p = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let w4 = build_waifw(&MixingPattern::W4, &p, &grid).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(w4.beta[(i, j)], p[i]);
            }
        }
        let w6 = build_waifw(&MixingPattern::W6, &p, &grid).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(w6.beta[(i, j)] != 0.0, i == j);
            }
        }
        let w3 = build_waifw(&MixingPattern::W3, &p, &grid).unwrap();
        assert_eq!(w3.beta[(0, 2)], 1.0);
        assert_eq!(w3.beta[(2, 0)], 1.0);
        let w5 = build_waifw(&MixingPattern::W5, &p, &grid).unwrap();
        assert_eq!(w5.beta[(5, 5)], 5.0);
        assert_eq!(w5.beta[(5, 4)], 6.0);
        let w1 = build_waifw(&MixingPattern::W1, &p, &grid).unwrap();
        assert_eq!(w1.beta[(5, 5)], 6.0);
        assert_eq!(w1.beta[(3, 3)], 4.0);
        assert!(build_waifw(&MixingPattern::W4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0], &grid).is_err());
        for p in MixingPattern::STANDARD {
            assert_eq!(p.n_params(), 6);
            p.validate().unwrap();
        }
    }

    #[test]
    fn custom_pattern_parsing() {
        let p = MixingPattern::parse_custom("1,2\n2,0\n").unwrap();
        assert_eq!(p.n_params(), 2);
        assert_eq!(p.structure()[1][1], None);
        assert!(MixingPattern::parse_custom("1,3\n3,1").is_err());
    }

    #[test]
    fn zero_matrix_has_zero_foi() {
        let (d, g) = belgium();
        let w = WaifwMatrix::new(g, DMatrix::zeros(6, 6)).unwrap();
        let l = solve_foi_fixed_point(&w, &d).unwrap();
        assert!(l.iter().all(|&x| x.abs() < 1e-10));
    }

    #[test]
    fn scalar_case_matches_root() {
        // u = 2 (1 - e^{-u}) with u = λ h
        let d = Demography::belgium_2003();
        let grid = AgeGrid::new(vec![0.5, 80.0]).unwrap();
        let h = 79.5;
        let beta = 2.0 / (h * d.mass_action_constant());
        let w = WaifwMatrix::new(grid, DMatrix::from_element(1, 1, beta)).unwrap();
        let l = solve_foi_fixed_point(&w, &d).unwrap();
        let u = crate::optim::bisect(|u| u - 2.0 * (1.0 - (-u).exp()), 0.5, 3.0, 1e-15).unwrap();
        assert!((l[0] * h - u).abs() < 1e-9);
        assert!((u - 1.5936).abs() < 1e-4);
    }

    #[test]
    fn jacobian_matches_differences() {
        let (d, g) = belgium();
        let beta = DMatrix::from_fn(6, 6, |i, j| 1e-4 * (1.0 + ((i * 5 + j * 3) % 7) as f64 / 4.0));
        let c = d.mass_action_constant();
        let widths = g.widths();
        let lam = [0.2, 0.15, 0.3, 0.05, 0.1, 0.02];
        let jac = foi_jacobian(&beta, &widths, c, &lam);
        let mut tp = [0.0; 6];
        let mut tm = [0.0; 6];
        for k in 0..6 {
            let mut p = lam;
            p[k] += 1e-7;
            let mut m = lam;
            m[k] -= 1e-7;
            foi_map(&beta, &widths, c, &p, &mut tp);
            foi_map(&beta, &widths, c, &m, &mut tm);
            for i in 0..6 {
                let fd = (tp[i] - tm[i]) / 2e-7;
                assert!((fd - jac[(i, k)]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }
}
