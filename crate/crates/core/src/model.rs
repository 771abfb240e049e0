//! The Fay-Herriot area-level model, benchmark constraints and the weighted loss.
//!
//! Observations follow `y = mu + e` with `e ~ N(0, D)`, `D = diag(d_1..d_k)` known, and the
//! benchmark asks for `W' muhat = t(y)` where `t(y)` is either the weighted direct total `W'y`
//! or a fixed vector `t0`. Losses are `(muhat - mu)' Q (muhat - mu)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, spd_inverse, symmetrize};

/// Design matrix and known sampling variances.
#[derive(Debug, Clone, PartialEq)]
pub struct FayHerriotModel {
    x: DMatrix<f64>,
    d: DVector<f64>,
}

impl FayHerriotModel {
    /// Builds a model after checking that shapes agree. Rank and positivity are reported by
    /// [`validate`] rather than rejected here.
    pub fn new(x: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if x.nrows() != d.len() {
            return Err(Error::Dimension(format!(
                "X has {} rows but D has {} entries",
                x.nrows(),
                d.len()
            )));
        }
        Ok(Self { x, d })
    }

    pub fn k(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    /// `D` as a dense diagonal matrix.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.d)
    }

    /// Diagonal of `V(lambda)^{-1} = (D + lambda I)^{-1}`.
    pub fn v_inv_diag(&self, lambda: f64) -> DVector<f64> {
        self.d.map(|di| 1.0 / (di + lambda))
    }
}

/// Direct estimates, one per area.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    y: DVector<f64>,
}

impl Observation {
    pub fn new(y: DVector<f64>) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("direct estimates y"));
        }
        Ok(Self { y })
    }

    /// Like [`Observation::new`], also checking the length against the model.
    pub fn for_model(model: &FayHerriotModel, y: DVector<f64>) -> Result<Self> {
        if y.len() != model.k() {
            return Err(Error::Dimension(format!(
                "y has {} entries, model has k = {}",
                y.len(),
                model.k()
            )));
        }
        Self::new(y)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.y
    }
}

/// Right-hand side of the benchmark `W' muhat = t(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// `t(y) = W'y`.
    WeightedDirect,
    /// `t(y) = t0`, a constant.
    Fixed(Vec<f64>),
}

impl Target {
    pub fn is_fixed(&self) -> bool {
        matches!(self, Target::Fixed(_))
    }
}

/// Benchmark weights `W` (k x m), loss matrix `Q` (k x k) and the target rule.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    w: DMatrix<f64>,
    q: DMatrix<f64>,
    target: Target,
}

impl BenchmarkSpec {
    /// Shape checks only; see [`validate`] for rank and definiteness.
    pub fn new(w: DMatrix<f64>, q: DMatrix<f64>, target: Target) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::Dimension(format!(
                "Q is {}x{}, not square",
                q.nrows(),
                q.ncols()
            )));
        }
        if w.nrows() != q.nrows() {
            return Err(Error::Dimension(format!(
                "W has {} rows but Q is {}x{}",
                w.nrows(),
                q.nrows(),
                q.ncols()
            )));
        }
        Ok(Self { w, q, target })
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    pub fn m(&self) -> usize {
        self.w.ncols()
    }

    /// Same weights and loss with a different target rule.
    pub fn with_target(&self, target: Target) -> Self {
        Self {
            w: self.w.clone(),
            q: self.q.clone(),
            target,
        }
    }

    /// Evaluates `t(y)`.
    pub fn target_value(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.target {
            Target::WeightedDirect => {
                if y.len() != self.k() {
                    return Err(Error::Dimension(format!(
                        "y has {} entries, W has {} rows",
                        y.len(),
                        self.k()
                    )));
                }
                Ok(self.w.tr_mul(y))
            }
            Target::Fixed(t0) => {
                if t0.len() != self.m() {
                    return Err(Error::Dimension(format!(
                        "t0 has {} entries, m = {}",
                        t0.len(),
                        self.m()
                    )));
                }
                Ok(DVector::from_column_slice(t0))
            }
        }
    }
}

/// One failed well-posedness check.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoAreas,
    BadRegressorCount { k: usize, p: usize },
    XRankDeficient { rank: usize, p: usize },
    NonpositiveVariance { area: usize, value: f64 },
    NonFiniteDesign,
    WShape { rows: usize, k: usize },
    TooManyConstraints { k: usize, m: usize },
    WRankDeficient { rank: usize, m: usize },
    QNotSymmetric { asymmetry: f64 },
    QNotPositiveDefinite,
    TargetLength { len: usize, m: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoAreas => write!(f, "model has no areas"),
            Violation::BadRegressorCount { k, p } => {
                write!(f, "need 1 <= p < k, got p = {p}, k = {k}")
            }
            Violation::XRankDeficient { rank, p } => {
                write!(f, "X rank-deficient (rank {rank} < p = {p})")
            }
            Violation::NonpositiveVariance { area, value } => {
                write!(f, "nonpositive sampling variance d[{area}] = {value}")
            }
            Violation::NonFiniteDesign => write!(f, "non-finite entry in X, D, W or Q"),
            Violation::WShape { rows, k } => write!(f, "W has {rows} rows, expected k = {k}"),
            Violation::TooManyConstraints { k, m } => write!(f, "need m < k, got m = {m}, k = {k}"),
            Violation::WRankDeficient { rank, m } => {
                write!(f, "W rank-deficient (rank {rank} < m = {m})")
            }
            Violation::QNotSymmetric { asymmetry } => {
                write!(f, "Q not symmetric (relative asymmetry {asymmetry:.3e})")
            }
            Violation::QNotPositiveDefinite => write!(f, "Q not positive definite"),
            Violation::TargetLength { len, m } => {
                write!(f, "t0 has length {len}, expected m = {m}")
            }
        }
    }
}

/// Outcome of [`validate`]; never aborts, just lists what is wrong.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::Invalid(msgs.join("; ")))
        }
    }
}

/// Checks rank, positivity and definiteness of a model/benchmark pair.
pub fn validate(model: &FayHerriotModel, spec: &BenchmarkSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let (k, p) = (model.k(), model.p());
    if k == 0 {
        violations.push(Violation::NoAreas);
    }
    if p == 0 || p >= k {
        violations.push(Violation::BadRegressorCount { k, p });
    }
    let finite = model
        .x
        .iter()
        .chain(model.d.iter())
        .chain(spec.w.iter())
        .chain(spec.q.iter())
        .all(|v| v.is_finite());
    if !finite {
        violations.push(Violation::NonFiniteDesign);
        return ValidationReport { violations };
    }
    if p > 0 && p < k {
        let rank = numerical_rank(&model.x);
        if rank < p {
            violations.push(Violation::XRankDeficient { rank, p });
        }
    }
    for (area, &value) in model.d.iter().enumerate() {
        if value <= 0.0 {
            violations.push(Violation::NonpositiveVariance { area, value });
        }
    }

    let m = spec.m();
    if spec.k() != k {
        violations.push(Violation::WShape { rows: spec.k(), k });
    }
    if m >= spec.k() {
        violations.push(Violation::TooManyConstraints { k: spec.k(), m });
    }
    let w_rank = numerical_rank(&spec.w);
    if w_rank < m {
        violations.push(Violation::WRankDeficient { rank: w_rank, m });
    }
    let asymmetry = (&spec.q - spec.q.transpose()).norm() / spec.q.norm().max(f64::MIN_POSITIVE);
    if asymmetry > 1e-10 {
        violations.push(Violation::QNotSymmetric { asymmetry });
    }
    if symmetrize(&spec.q).cholesky().is_none() {
        violations.push(Violation::QNotPositiveDefinite);
    }
    if let Target::Fixed(t0) = &spec.target {
        if t0.len() != m {
            violations.push(Violation::TargetLength { len: t0.len(), m });
        }
    }
    ValidationReport { violations }
}

/// Quantities derived from `(W, Q)` that every constrained estimator needs.
#[derive(Debug, Clone)]
pub struct Projector {
    /// `Q^{-1}`.
    pub q_inv: DMatrix<f64>,
    /// `(W' Q^{-1} W)^{-1}`, m x m.
    pub wqw_inv: DMatrix<f64>,
    /// `Q^{-1} W (W' Q^{-1} W)^{-1}`, k x m.
    pub gain: DMatrix<f64>,
    /// `P_W = Q^{-1} W (W' Q^{-1} W)^{-1} W'`.
    pub p_w: DMatrix<f64>,
    /// `Q_W = Q - W (W' Q^{-1} W)^{-1} W'`.
    pub q_w: DMatrix<f64>,
}

impl Projector {
    pub fn new(spec: &BenchmarkSpec) -> Result<Self> {
        let q_inv = spd_inverse(&spec.q, "Q")?;
        let q_inv_w = &q_inv * &spec.w;
        let wqw_inv = spd_inverse(&spec.w.tr_mul(&q_inv_w), "W'Q^{-1}W")?;
        let gain = &q_inv_w * &wqw_inv;
        let p_w = &gain * spec.w.transpose();
        let q_w = symmetrize(&(&spec.q - &spec.w * &wqw_inv * spec.w.transpose()));
        Ok(Self {
            q_inv,
            wqw_inv,
            gain,
            p_w,
            q_w,
        })
    }
}

/// `P_W = Q^{-1} W (W'Q^{-1}W)^{-1} W'`, the Q-orthogonal projector onto the span of `Q^{-1}W`.
pub fn projection_pw(spec: &BenchmarkSpec) -> Result<DMatrix<f64>> {
    Ok(Projector::new(spec)?.p_w)
}

/// `Q_W = Q - W (W'Q^{-1}W)^{-1} W' = Q (I - P_W)`, the loss left after benchmarking.
pub fn loss_reduced_qw(spec: &BenchmarkSpec) -> Result<DMatrix<f64>> {
    Ok(Projector::new(spec)?.q_w)
}

/// `(muhat - mu)' Q (muhat - mu)`.
pub fn weighted_loss(muhat: &DVector<f64>, mu: &DVector<f64>, q: &DMatrix<f64>) -> Result<f64> {
    if muhat.len() != mu.len() || q.nrows() != mu.len() || q.ncols() != mu.len() {
        return Err(Error::Dimension(format!(
            "loss needs matching sizes, got muhat {}, mu {}, Q {}x{}",
            muhat.len(),
            mu.len(),
            q.nrows(),
            q.ncols()
        )));
    }
    let diff = muhat - mu;
    Ok(diff.dot(&(q * &diff)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;

    fn e(k: usize, i: usize) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(k, 1);
        w[(i, 0)] = 1.0;
        w
    }

    #[test]
    fn minimal_instance_is_valid() {
        let model = FayHerriotModel::new(
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        let spec = BenchmarkSpec::new(
            DMatrix::from_element(2, 1, 1.0),
            DMatrix::identity(2, 2),
            Target::WeightedDirect,
        )
        .unwrap();
        assert!(validate(&model, &spec).is_valid());
    }

    #[test]
    fn zero_variance_is_reported() {
        let model = FayHerriotModel::new(
            DMatrix::from_element(3, 1, 1.0),
            DVector::from_vec(vec![1.0, 0.0, 2.0]),
        )
        .unwrap();
        let spec = BenchmarkSpec::new(
            DMatrix::from_element(3, 1, 1.0),
            DMatrix::identity(3, 3),
            Target::WeightedDirect,
        )
        .unwrap();
        let report = validate(&model, &spec);
        assert_eq!(
            report.violations,
            vec![Violation::NonpositiveVariance {
                area: 1,
                value: 0.0
            }]
        );
        assert!(report.violations[0]
            .to_string()
            .contains("nonpositive sampling variance"));
        assert!(report.into_result().is_err());
    }

    #[test]
    fn duplicate_w_columns_are_rank_deficient() {
        let model = FayHerriotModel::new(
            DMatrix::from_element(4, 1, 1.0),
            DVector::from_element(4, 1.0),
        )
        .unwrap();
        let w = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let spec = BenchmarkSpec::new(w, DMatrix::identity(4, 4), Target::WeightedDirect).unwrap();
        let report = validate(&model, &spec);
        assert!(report
            .violations
            .iter()
            .any(|v| v.to_string().contains("W rank-deficient")));
    }

    #[test]
    fn indefinite_q_and_short_target_reported() {
        let model = FayHerriotModel::new(
            DMatrix::from_element(3, 1, 1.0),
            DVector::from_element(3, 1.0),
        )
        .unwrap();
        let mut q = DMatrix::identity(3, 3);
        q[(2, 2)] = -1.0;
        let spec = BenchmarkSpec::new(
            DMatrix::from_element(3, 1, 1.0),
            q,
            Target::Fixed(vec![1.0, 2.0]),
        )
        .unwrap();
        let report = validate(&model, &spec);
        assert!(report.violations.contains(&Violation::QNotPositiveDefinite));
        assert!(report
            .violations
            .contains(&Violation::TargetLength { len: 2, m: 1 }));
    }

    #[test]
    fn coordinate_projection() {
        let k = 4;
        let spec =
            BenchmarkSpec::new(e(k, 0), DMatrix::identity(k, k), Target::WeightedDirect).unwrap();
        let pw = projection_pw(&spec).unwrap();
        let mut expect = DMatrix::zeros(k, k);
        expect[(0, 0)] = 1.0;
        assert!(rel_frobenius(&pw, &expect, 1.0) < 1e-14);
        let qw = loss_reduced_qw(&spec).unwrap();
        let mut expect_qw = DMatrix::identity(k, k);
        expect_qw[(0, 0)] = 0.0;
        assert!(rel_frobenius(&qw, &expect_qw, 1.0) < 1e-14);
    }

    #[test]
    fn projection_matches_explicit_formula() {
        // Independent evaluation with LU inverses rather than the Cholesky path.
        let w = DMatrix::from_column_slice(5, 1, &[0.3, -1.2, 0.8, 2.0, 0.1]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]));
        let spec = BenchmarkSpec::new(w.clone(), q.clone(), Target::WeightedDirect).unwrap();
        let qi = q.clone().try_inverse().unwrap();
        let mid = (w.transpose() * &qi * &w).try_inverse().unwrap();
        let oracle = &qi * &w * mid * w.transpose();
        assert!(rel_frobenius(&projection_pw(&spec).unwrap(), &oracle, 1.0) < 1e-12);
        assert!((oracle.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let q = DMatrix::identity(2, 2);
        let mu = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(weighted_loss(&mu, &mu, &q).unwrap(), 0.0);
        let muhat = DVector::from_vec(vec![4.0, 3.0]);
        assert_eq!(weighted_loss(&muhat, &mu, &q).unwrap(), 25.0);
        let q2 = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let muhat2 = DVector::from_vec(vec![2.0, 0.0]);
        assert_eq!(weighted_loss(&muhat2, &mu, &q2).unwrap(), 3.0);
        assert!(weighted_loss(&muhat, &DVector::zeros(3), &q).is_err());
    }

    #[test]
    fn target_values() {
        let w = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let spec = BenchmarkSpec::new(w, DMatrix::identity(3, 3), Target::WeightedDirect).unwrap();
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        assert_eq!(spec.target_value(&y).unwrap()[0], 6.0);
        let fixed = spec.with_target(Target::Fixed(vec![4.5]));
        assert_eq!(fixed.target_value(&y).unwrap()[0], 4.5);
    }
}
