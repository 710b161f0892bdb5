use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic B-spline basis on equally spaced knots over `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
}

impl SplineBasis {
    pub fn new(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        if dim < 4 {
            return Err(Error::InvalidInput(format!("basis dimension must be at least 4, got {dim}")));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::InvalidInput(format!("bad basis range [{lower}, {upper}]")));
        }
        Ok(SplineBasis { dim, lower, upper })
    }

    fn intervals(&self) -> usize {
        self.dim - 3
    }

    fn spacing(&self) -> f64 {
        (self.upper - self.lower) / self.intervals() as f64
    }

    /// Full knot vector, `dim + 4` knots with three beyond each end.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.dim + 4)
            .map(|i| self.lower + (i as f64 - 3.0) * h)
            .collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Index of the first non-zero basis function at `x` and the values of
    /// the four non-zero functions.
    pub fn eval(&self, x: f64) -> (usize, [f64; 4]) {
        let t = (x - self.lower) / self.spacing();
        let s = (t.floor().max(0.0) as usize).min(self.intervals() - 1);
        let u = t - s as f64;
        let u2 = u * u;
        let u3 = u2 * u;
        let v = 1.0 - u;
        (
            s,
            [
                v * v * v / 6.0,
                (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
                (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
                u3 / 6.0,
            ],
        )
    }

    /// `D'D` for the second-order difference matrix `D`, row-major.
    pub fn penalty(&self) -> Vec<f64> {
        let k = self.dim;
        let mut p = vec![0.0; k * k];
        for r in 0..k - 2 {
            let d = [(r, 1.0), (r + 1, -2.0), (r + 2, 1.0)];
            for &(i, a) in &d {
                for &(j, b) in &d {
                    p[i * k + j] += a * b;
                }
            }
        }
        p
    }
}
