//! Direct, Bayes, empirical Bayes and benchmarked estimators of the small-area means.

mod moment;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use moment::{VarianceFit, LAMBDA_TOL, MAX_DOUBLINGS};

use crate::canonical::{CanonicalFrame, Diagonalized};
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, spd_solve_vec, symmetrize};
use crate::model::{BenchmarkSpec, FayHerriotModel, Observation, Projector, Target};
use moment::Shrinkage;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Direct,
    Bayes,
    Eb,
    Cm,
    Ceb,
    Uc1,
    Uc2,
    Constrained(Box<Method>),
}

impl Method {
    /// Methods whose output must satisfy the benchmark.
    pub fn is_benchmarked(&self) -> bool {
        matches!(
            self,
            Method::Cm | Method::Ceb | Method::Uc1 | Method::Uc2 | Method::Constrained(_)
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Direct => write!(f, "direct"),
            Method::Bayes => write!(f, "bayes"),
            Method::Eb => write!(f, "eb"),
            Method::Cm => write!(f, "cm"),
            Method::Ceb => write!(f, "ceb"),
            Method::Uc1 => write!(f, "uc1"),
            Method::Uc2 => write!(f, "uc2"),
            Method::Constrained(inner) => write!(f, "constrained({inner})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub mu_hat: DVector<f64>,
    pub fit: Option<VarianceFit>,
    pub beta_hat: Option<DVector<f64>>,
    /// `W' mu_hat - t(y)`; absent for estimators computed without a benchmark.
    pub constraint_residual: Option<DVector<f64>>,
    pub method: Method,
}

impl EstimateResult {
    pub fn max_constraint_violation(&self) -> Option<f64> {
        self.constraint_residual.as_ref().map(|r| r.amax())
    }
}

/// `A(lambda) = V^{-1} - V^{-1} X (X'V^{-1}X)^{-1} X'V^{-1}` with `V = D + lambda I`, dense.
pub fn a_matrix(model: &FayHerriotModel, lambda: f64) -> Result<DMatrix<f64>> {
    a_matrix_general(model.x(), model.d(), lambda)
}

pub(crate) fn a_matrix_general(
    x: &DMatrix<f64>,
    d: &DVector<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let v_inv = DMatrix::from_diagonal(&d.map(|di| 1.0 / (di + lambda)));
    let vx = &v_inv * x;
    let xvx = x.tr_mul(&vx);
    let inner = spd_solve(&xvx, &vx.transpose(), "X'V^{-1}X")?;
    Ok(symmetrize(&(v_inv - &vx * inner)))
}

/// `(X'V^{-1}X)^{-1} X'V^{-1} y`.
pub fn gls_beta(model: &FayHerriotModel, obs: &Observation, lambda: f64) -> Result<DVector<f64>> {
    Ok(Shrinkage::new(obs.y(), model.x(), model.d())?
        .fit(lambda)?
        .beta)
}

/// Fay-Herriot moment estimator of the prior variance.
pub fn fh_lambda_solve(model: &FayHerriotModel, obs: &Observation) -> Result<VarianceFit> {
    if model.p() >= model.k() {
        return Err(Error::Assumption(format!(
            "need k > p, got k = {}, p = {}",
            model.k(),
            model.p()
        )));
    }
    Shrinkage::new(obs.y(), model.x(), model.d())?.solve((model.k() - model.p()) as f64)
}

/// `y - D (D + lambda I)^{-1} (y - X beta)` for known `(beta, lambda)`.
pub fn bayes_estimate(
    model: &FayHerriotModel,
    obs: &Observation,
    beta: &DVector<f64>,
    lambda: f64,
) -> Result<EstimateResult> {
    if !(lambda > 0.0) {
        return Err(Error::Assumption(format!(
            "Bayes estimator needs lambda > 0, got {lambda}"
        )));
    }
    if beta.len() != model.p() {
        return Err(Error::Dimension(format!(
            "beta has {} entries, p = {}",
            beta.len(),
            model.p()
        )));
    }
    let shrink = Shrinkage::new(obs.y(), model.x(), model.d())?;
    Ok(EstimateResult {
        mu_hat: shrink.shrink(lambda, beta),
        fit: None,
        beta_hat: Some(beta.clone()),
        constraint_residual: None,
        method: Method::Bayes,
    })
}

/// Empirical Bayes (EBLUP) estimate with the Fay-Herriot `lambda_hat`.
pub fn eb_estimate(model: &FayHerriotModel, obs: &Observation) -> Result<EstimateResult> {
    let fit = fh_lambda_solve(model, obs)?;
    eb_with_fit(model, obs, fit)
}

/// EB estimate plugging in a given variance fit.
pub fn eb_with_fit(
    model: &FayHerriotModel,
    obs: &Observation,
    fit: VarianceFit,
) -> Result<EstimateResult> {
    let shrink = Shrinkage::new(obs.y(), model.x(), model.d())?;
    let beta = shrink.fit(fit.lambda_hat)?.beta;
    Ok(EstimateResult {
        mu_hat: shrink.shrink(fit.lambda_hat, &beta),
        fit: Some(fit),
        beta_hat: Some(beta),
        constraint_residual: None,
        method: Method::Eb,
    })
}

/// Benchmarking machinery for one `(W, Q, t)` with the projector cached.
#[derive(Debug, Clone)]
pub struct Benchmarker {
    spec: BenchmarkSpec,
    projector: Projector,
}

impl Benchmarker {
    pub fn new(spec: &BenchmarkSpec) -> Result<Self> {
        Ok(Self {
            spec: spec.clone(),
            projector: Projector::new(spec)?,
        })
    }

    pub fn spec(&self) -> &BenchmarkSpec {
        &self.spec
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// `muhat + Q^{-1}W(W'Q^{-1}W)^{-1} (t - W'muhat)`.
    pub fn adjust(&self, muhat: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
        let gap = t - self.spec.w().tr_mul(muhat);
        muhat + &self.projector.gain * gap
    }

    pub fn residual(&self, muhat: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.spec.w().tr_mul(muhat) - self.spec.target_value(y)?)
    }

    /// Constrained version of any estimate.
    pub fn constrain(&self, inner: &EstimateResult, obs: &Observation) -> Result<EstimateResult> {
        let t = self.spec.target_value(obs.y())?;
        let mu_hat = self.adjust(&inner.mu_hat, &t);
        let residual = self.spec.w().tr_mul(&mu_hat) - t;
        Ok(EstimateResult {
            mu_hat,
            fit: inner.fit,
            beta_hat: inner.beta_hat.clone(),
            constraint_residual: Some(residual),
            method: Method::Constrained(Box::new(inner.method.clone())),
        })
    }

    pub fn cm(&self, obs: &Observation) -> Result<EstimateResult> {
        let direct = direct_estimate(obs);
        let mut out = self.constrain(&direct, obs)?;
        out.method = Method::Cm;
        Ok(out)
    }

    /// `(I - P_W) muhat_EB + Q^{-1}W(W'Q^{-1}W)^{-1} t(y)`.
    pub fn ceb_from(&self, eb: &EstimateResult, obs: &Observation) -> Result<EstimateResult> {
        let t = self.spec.target_value(obs.y())?;
        let p_w = &self.projector.p_w;
        let mu_hat = &eb.mu_hat - p_w * &eb.mu_hat + &self.projector.gain * &t;
        let residual = self.spec.w().tr_mul(&mu_hat) - t;
        Ok(EstimateResult {
            mu_hat,
            fit: eb.fit,
            beta_hat: eb.beta_hat.clone(),
            constraint_residual: Some(residual),
            method: Method::Ceb,
        })
    }
}

pub fn direct_estimate(obs: &Observation) -> EstimateResult {
    EstimateResult {
        mu_hat: obs.y().clone(),
        fit: None,
        beta_hat: None,
        constraint_residual: None,
        method: Method::Direct,
    }
}

/// Benchmark an arbitrary estimate.
pub fn constrain(
    inner: &EstimateResult,
    spec: &BenchmarkSpec,
    obs: &Observation,
) -> Result<EstimateResult> {
    Benchmarker::new(spec)?.constrain(inner, obs)
}

/// Constrained generalized Bayes estimator under the uniform prior (benchmarked `y`).
pub fn cm_estimate(spec: &BenchmarkSpec, obs: &Observation) -> Result<EstimateResult> {
    Benchmarker::new(spec)?.cm(obs)
}

/// Constrained empirical Bayes estimator.
pub fn ceb_estimate(
    model: &FayHerriotModel,
    spec: &BenchmarkSpec,
    obs: &Observation,
) -> Result<EstimateResult> {
    let eb = eb_estimate(model, obs)?;
    Benchmarker::new(spec)?.ceb_from(&eb, obs)
}

/// Empirical Bayes estimate of a mean vector observed as `z ~ N(xi, sigma)` with prior
/// `xi ~ N(xs beta, lambda I)`. `lambda` solves the moment equation with `dim(z) - p` degrees.
pub fn subspace_eb(
    z: &DVector<f64>,
    xs: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<(DVector<f64>, VarianceFit)> {
    subspace_eb_diagonalized(z, xs, &Diagonalized::new(sigma)?)
}

/// As [`subspace_eb`], reusing an eigendecomposition of `sigma`. In eigen-coordinates
/// `sigma + lambda I` is diagonal and the problem is the ordinary Fay-Herriot one.
pub fn subspace_eb_diagonalized(
    z: &DVector<f64>,
    xs: &DMatrix<f64>,
    sigma: &Diagonalized,
) -> Result<(DVector<f64>, VarianceFit)> {
    let n = z.len();
    let p = xs.ncols();
    if xs.nrows() != n || sigma.values.len() != n {
        return Err(Error::Dimension(format!(
            "subspace EB: z {n}, Xs {}x{p}, Sigma {}",
            xs.nrows(),
            sigma.values.len()
        )));
    }
    if p >= n {
        return Err(Error::Assumption(format!(
            "subspace EB needs dim(z) > p, got {n} <= {p}"
        )));
    }
    let u = &sigma.vectors;
    let z_rot = u.tr_mul(z);
    let x_rot = u.tr_mul(xs);
    let shrink = Shrinkage::new(&z_rot, &x_rot, &sigma.values)?;
    let fit = shrink.solve((n - p) as f64)?;
    let beta = shrink.fit(fit.lambda_hat)?.beta;
    Ok((u * shrink.shrink(fit.lambda_hat, &beta), fit))
}

fn subspace_beta(
    z: &DVector<f64>,
    xs: &DMatrix<f64>,
    sigma: &Diagonalized,
    lambda: f64,
) -> Result<DVector<f64>> {
    let z_rot = sigma.vectors.tr_mul(z);
    let x_rot = sigma.vectors.tr_mul(xs);
    Ok(Shrinkage::new(&z_rot, &x_rot, &sigma.values)?
        .fit(lambda)?
        .beta)
}

/// Unconstrained EB estimator that reproduces `W'y` automatically (weighted-direct target).
pub fn uc1_estimate(
    spec: &BenchmarkSpec,
    obs: &Observation,
    frame: &CanonicalFrame,
) -> Result<EstimateResult> {
    if spec.target().is_fixed() {
        return Err(Error::CaseMismatch {
            estimator: "uc1",
            case: "a fixed target",
        });
    }
    let des = &frame.design;
    let (xi3, fit) = subspace_eb_diagonalized(&frame.z3, &des.x3, &des.v11_2_eig)?;
    let beta = subspace_beta(&frame.z3, &des.x3, &des.v11_2_eig, fit.lambda_hat)?;
    let first = xi3 + &des.coupling * &frame.z2;
    let mu_hat = des.to_original(&first, &frame.z2);
    let residual = spec.w().tr_mul(&mu_hat) - spec.target_value(obs.y())?;
    Ok(EstimateResult {
        mu_hat,
        fit: Some(fit),
        beta_hat: Some(beta),
        constraint_residual: Some(residual),
        method: Method::Uc1,
    })
}

/// Unconstrained EB estimator that hits a fixed target `t0` automatically.
pub fn uc2_estimate(
    spec: &BenchmarkSpec,
    obs: &Observation,
    frame: &CanonicalFrame,
) -> Result<EstimateResult> {
    let Target::Fixed(_) = spec.target() else {
        return Err(Error::CaseMismatch {
            estimator: "uc2",
            case: "the weighted-direct target",
        });
    };
    let des = &frame.design;
    let (z4, xi0) = match (&frame.z4, &des.xi0) {
        (Some(z4), Some(xi0)) => (z4, xi0),
        _ => {
            return Err(Error::Assumption(
                "canonical frame was built without a fixed target".into(),
            ))
        }
    };
    let (xi1, fit) = subspace_eb_diagonalized(z4, &des.x4, &des.v11_2_eig)?;
    let beta = subspace_beta(z4, &des.x4, &des.v11_2_eig, fit.lambda_hat)?;
    let mu_hat = des.to_original(&xi1, xi0);
    let residual = spec.w().tr_mul(&mu_hat) - spec.target_value(obs.y())?;
    Ok(EstimateResult {
        mu_hat,
        fit: Some(fit),
        beta_hat: Some(beta),
        constraint_residual: Some(residual),
        method: Method::Uc2,
    })
}

/// Solve of `(X'V^{-1}X) b = X'V^{-1} y` through dense matrices; used by tests as a second route.
#[doc(hidden)]
pub fn gls_beta_dense(
    model: &FayHerriotModel,
    obs: &Observation,
    lambda: f64,
) -> Result<DVector<f64>> {
    let v_inv = DMatrix::from_diagonal(&model.v_inv_diag(lambda));
    let xv = model.x().transpose() * &v_inv;
    spd_solve_vec(&(&xv * model.x()), &(&xv * obs.y()), "X'V^{-1}X")
}
