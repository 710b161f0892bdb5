//! Saturated baseline: one negative-binomial mean per unordered pair of age
//! classes with reciprocity built into the parameterisation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::SocialContactMatrix;
use crate::data::{AgeGrid, ContactSurvey};
use crate::error::{Error, Result};
use crate::optim::{bfgs, BfgsOptions};

#[derive(Debug, Clone)]
pub struct SaturatedFit {
    pub matrix: SocialContactMatrix,
    pub dispersion: f64,
    pub loglik: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairIndex {
    a: usize,
    b: usize,
}

/// ML fit of the saturated contact model on `grid`. `population` holds the
/// class sizes used for `m_ij w_i = m_ji w_j`. Participants and contacts
/// outside the grid are ignored.
pub fn saturated_contact_matrix(
    survey: &ContactSurvey,
    grid: &AgeGrid,
    population: &[f64],
) -> Result<SaturatedFit> {
    let j = grid.n_classes();
    if population.len() != j {
        return Err(Error::GridMismatch(format!(
            "{} population classes for {j} age classes",
            population.len()
        )));
    }
    if let Some(i) = population.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::ZeroPopulation(i));
    }
    let mut wsum = vec![0.0; j];
    let mut ysum = vec![0.0; j * j];
    let mut hist: Vec<f64> = Vec::new();
    let mut row = vec![0u32; j];
    for p in &survey.participants {
        let Some(i) = grid.class_of(p.age) else { continue };
        row.iter_mut().for_each(|c| *c = 0);
        for c in &p.contacts {
            if let Some(cj) = grid.class_of(c.age_point()) {
                row[cj] += 1;
            }
        }
        wsum[i] += p.weight;
        for (cj, &y) in row.iter().enumerate() {
            ysum[i * j + cj] += p.weight * f64::from(y);
            let y = y as usize;
            if hist.len() <= y {
                hist.resize(y + 1, 0.0);
            }
            hist[y] += p.weight;
        }
    }

    let pairs: Vec<PairIndex> = (0..j)
        .flat_map(|a| (a..j).map(move |b| PairIndex { a, b }))
        .collect();
    let mut start = Vec::with_capacity(pairs.len() + 1);
    for &PairIndex { a, b } in &pairs {
        let w = &population;
        let exposure = wsum[a] + if a == b { 0.0 } else { wsum[b] * w[a] / w[b] };
        let y = ysum[a * j + b] + if a == b { 0.0 } else { ysum[b * j + a] };
        if exposure <= 0.0 || y <= 0.0 {
            return Err(Error::EmptyCell(a, b));
        }
        start.push((y / exposure).ln());
    }
    start.push(0.0);

    let total: f64 = hist.iter().sum();
    let np = pairs.len();
    let means = |theta: &[f64]| -> Vec<f64> {
        let mut m = vec![0.0; j * j];
        for (t, &PairIndex { a, b }) in theta.iter().zip(&pairs) {
            m[a * j + b] = t.exp();
            m[b * j + a] = t.exp() * population[a] / population[b];
        }
        m
    };
    let loglik = |theta: &[f64]| -> f64 {
        let k = theta[np].exp();
        let m = means(theta);
        let mut ll = -total * ln_gamma(k);
        for (y, &h) in hist.iter().enumerate() {
            if h > 0.0 {
                ll += h * (ln_gamma(y as f64 + k) - ln_gamma(y as f64 + 1.0));
            }
        }
        for i in 0..j {
            for cj in 0..j {
                let (mi, y) = (m[i * j + cj], ysum[i * j + cj]);
                ll += wsum[i] * k * k.ln() - (wsum[i] * k + y) * (k + mi).ln() + y * mi.ln();
            }
        }
        ll
    };
    let gradient = |theta: &[f64], g: &mut [f64]| {
        let k = theta[np].exp();
        let m = means(theta);
        let score = |i: usize, cj: usize| {
            let mi = m[i * j + cj];
            (ysum[i * j + cj] - wsum[i] * mi) * k / (k + mi)
        };
        for (q, &PairIndex { a, b }) in pairs.iter().enumerate() {
            let s = if a == b { score(a, a) } else { score(a, b) + score(b, a) };
            g[q] = -s;
        }
        let mut dk = -total * digamma(k);
        for (y, &h) in hist.iter().enumerate() {
            if h > 0.0 {
                dk += h * digamma(y as f64 + k);
            }
        }
        for i in 0..j {
            for cj in 0..j {
                let (mi, y) = (m[i * j + cj], ysum[i * j + cj]);
                dk += wsum[i] * (k.ln() + 1.0 - (k + mi).ln()) - (wsum[i] * k + y) / (k + mi);
            }
        }
        g[np] = -dk * k;
    };
    let fit = bfgs(|t| -loglik(t), gradient, &start, &BfgsOptions::default());
    if !fit.converged {
        return Err(Error::NonConvergence {
            what: "saturated contact model".into(),
            iterations: fit.iterations,
            residual: fit.grad_norm,
            best: fit.x,
        });
    }
    let m = means(&fit.x);
    Ok(SaturatedFit {
        matrix: SocialContactMatrix {
            grid: grid.clone(),
            m: DMatrix::from_row_slice(j, j, &m),
        },
        dispersion: fit.x[np].exp(),
        loglik: -fit.value,
        iterations: fit.iterations,
    })
}
