//! Weighted least squares under `V(lambda) = diag(d) + lambda I` and the Fay-Herriot moment
//! equation `y' A(lambda) y = df`.
//!
//! `y' A(lambda) y` equals the weighted residual sum of squares of the GLS fit, which is how it is
//! evaluated here: `O(k p^2)` per call with no k x k matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bisection stops once the bracket is this narrow.
pub const LAMBDA_TOL: f64 = 1e-10;
/// Upper-bracket doublings allowed before giving up.
pub const MAX_DOUBLINGS: u32 = 60;

/// Result of solving the moment equation, truncated at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceFit {
    pub lambda_hat: f64,
    /// Untruncated root; reported as 0 when the equation has no nonnegative root.
    pub lambda_star: f64,
    pub converged: bool,
    pub iterations: u32,
    /// `y' A(lambda_star) y - df`.
    pub residual: f64,
}

/// GLS fit of `y` on `x` with heteroscedastic variances `d + lambda`.
#[derive(Debug, Clone)]
pub(crate) struct Shrinkage<'a> {
    pub y: &'a DVector<f64>,
    pub x: &'a DMatrix<f64>,
    pub d: &'a DVector<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct WeightedFit {
    pub beta: DVector<f64>,
    /// `y' A(lambda) y`
    pub moment: f64,
}

impl<'a> Shrinkage<'a> {
    pub fn new(y: &'a DVector<f64>, x: &'a DMatrix<f64>, d: &'a DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() || d.len() != y.len() {
            return Err(Error::Dimension(format!(
                "shrinkage needs matching sizes: y {}, X {}x{}, d {}",
                y.len(),
                x.nrows(),
                x.ncols(),
                d.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation vector"));
        }
        Ok(Self { y, x, d })
    }

    pub fn fit(&self, lambda: f64) -> Result<WeightedFit> {
        let p = self.x.ncols();
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwy = DVector::<f64>::zeros(p);
        for (i, row) in self.x.row_iter().enumerate() {
            let w = 1.0 / (self.d[i] + lambda);
            for a in 0..p {
                let wa = w * row[a];
                xtwy[a] += wa * self.y[i];
                for b in 0..=a {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let beta = xtwx
            .cholesky()
            .ok_or(Error::Singular("X'V^{-1}X"))?
            .solve(&xtwy);
        let fitted = self.x * &beta;
        let moment = (0..self.y.len())
            .map(|i| {
                let r = self.y[i] - fitted[i];
                r * r / (self.d[i] + lambda)
            })
            .sum();
        Ok(WeightedFit { beta, moment })
    }

    /// Solves `y' A(lambda*) y = df` by bracketing and bisection; `lambda_hat = max(lambda*, 0)`.
    pub fn solve(&self, df: f64) -> Result<VarianceFit> {
        let at_zero = self.fit(0.0)?.moment - df;
        if at_zero <= 0.0 {
            return Ok(VarianceFit {
                lambda_hat: 0.0,
                lambda_star: 0.0,
                converged: true,
                iterations: 0,
                residual: at_zero,
            });
        }
        let mut lo = 0.0;
        let mut hi = self.d.max().max(f64::MIN_POSITIVE);
        let mut iterations = 0;
        let mut doublings = 0;
        loop {
            let value = self.fit(hi)?.moment - df;
            iterations += 1;
            if value.is_nan() {
                return Err(Error::NonFinite("moment function"));
            }
            if value <= 0.0 {
                break;
            }
            if doublings == MAX_DOUBLINGS {
                return Err(Error::Bracket {
                    doublings,
                    upper: hi,
                    residual: value,
                });
            }
            lo = hi;
            hi *= 2.0;
            doublings += 1;
        }
        while hi - lo > LAMBDA_TOL {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.fit(mid)?.moment - df > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        let root = 0.5 * (lo + hi);
        let residual = self.fit(root)?.moment - df;
        Ok(VarianceFit {
            lambda_hat: root,
            lambda_star: root,
            converged: true,
            iterations,
            residual,
        })
    }

    /// `y - diag(d / (d + lambda)) (y - X beta)`.
    pub fn shrink(&self, lambda: f64, beta: &DVector<f64>) -> DVector<f64> {
        let fitted = self.x * beta;
        DVector::from_fn(self.y.len(), |i, _| {
            let di = self.d[i];
            self.y[i] - di / (di + lambda) * (self.y[i] - fitted[i])
        })
    }
}
