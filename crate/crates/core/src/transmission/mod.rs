//! From contact rates to transmission rates: proportionality models, their
//! likelihood fit to serology, and R0 from the next-generation matrix.

mod engine;
mod proportionality;

use nalgebra::DMatrix;

use crate::data::Demography;
use crate::error::{Error, Result};
use crate::waifw::WaifwMatrix;

pub use engine::{
    fit_beta_model, profile_interval, profile_likelihood_ci, BetaModel, FitOptions, ProfileInterval,
    TransmissionFit, IDENTIFIABILITY_THRESHOLD,
};
pub use proportionality::{
    apply_proportionality, fit_proportionality, proportionality_profile_ci, LoglinearForm, ProportionalityFit, ProportionalityModel,
    TwoClassStructure, DEFAULT_SPLIT_AGE,
};

/// Entry `(i, j)` is `(N D / L) (a_{i+1} - a_i) β_ij`.
pub fn next_generation_matrix(waifw: &WaifwMatrix, demography: &Demography) -> Result<DMatrix<f64>> {
    demography.check_grid(&waifw.grid)?;
    Ok(ngm_raw(&waifw.beta, &waifw.grid.widths(), demography.mass_action_constant()))
}

pub(crate) fn ngm_raw(beta: &DMatrix<f64>, widths: &[f64], c: f64) -> DMatrix<f64> {
    DMatrix::from_fn(beta.nrows(), beta.ncols(), |i, j| c * widths[i] * beta[(i, j)])
}

const POWER_MAX_ITER: usize = 1000;
const POWER_TOL: f64 = 1e-12;

fn perron_residual(m: &DMatrix<f64>, v: &[f64], rho: f64) -> f64 {
    let n = v.len();
    let norm = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    (0..n)
        .map(|i| ((0..n).map(|j| m[(i, j)] * v[j]).sum::<f64>() - rho * v[i]).abs())
        .fold(0.0, f64::max)
        / (norm * rho.max(f64::MIN_POSITIVE))
}

/// Spectral radius of a non-negative square matrix.
///
/// Power iteration from the vector of ones, polished by a few shifted
/// inverse iterations. When the iteration cycles or stalls (imprimitive or
/// reducible matrices) the result comes from a dense eigensolve.
pub fn dominant_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::InvalidInput("next-generation matrix must be square and non-empty".into()));
    }
    if m.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidInput("next-generation matrix must be finite and non-negative".into()));
    }
    let mut v = vec![1.0; n];
    let mut w = vec![0.0; n];
    let mut rho = 0.0;
    let mut converged = false;
    for _ in 0..POWER_MAX_ITER {
        for i in 0..n {
            w[i] = (0..n).map(|j| m[(i, j)] * v[j]).sum();
        }
        let next: f64 = w.iter().sum::<f64>() / v.iter().sum::<f64>();
        if next == 0.0 {
            // nilpotent along the positive cone
            if m.iter().all(|&x| x == 0.0) {
                return Ok(0.0);
            }
            break;
        }
        let scale = w.iter().cloned().fold(0.0, f64::max);
        for i in 0..n {
            v[i] = w[i] / scale;
        }
        let done = (next - rho).abs() <= POWER_TOL * next;
        rho = next;
        if done {
            converged = true;
            break;
        }
    }
    if converged {
        let refined = inverse_refine(m, &v, rho);
        let (r, vec) = refined.unwrap_or((rho, v));
        if perron_residual(m, &vec, r) < 1e-9 {
            return Ok(r);
        }
    }
    let eig = m.clone().complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn inverse_refine(m: &DMatrix<f64>, v0: &[f64], rho: f64) -> Option<(f64, Vec<f64>)> {
    let n = v0.len();
    let shift = rho * (1.0 + 1e-9);
    let mut a = m.clone();
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    let lu = a.lu();
    let mut v = nalgebra::DVector::from_column_slice(v0);
    let mut best = (rho, v0.to_vec(), perron_residual(m, v0, rho));
    for _ in 0..3 {
        let mut x = lu.solve(&v)?;
        let s = x.iter().cloned().fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        if s == 0.0 || !s.is_finite() {
            break;
        }
        x /= s;
        let mx = m * &x;
        let r = mx.sum() / x.sum();
        let res = perron_residual(m, x.as_slice(), r);
        if res < best.2 {
            best = (r, x.as_slice().to_vec(), res);
        }
        v = x;
    }
    Some((best.0, best.1))
}

/// R0 of a WAIFW matrix under the given demography.
pub fn basic_reproduction_number(waifw: &WaifwMatrix, demography: &Demography) -> Result<f64> {
    dominant_eigenvalue(&next_generation_matrix(waifw, demography)?)
}
