//! Benchmarked empirical Bayes estimation for the Fay-Herriot small area model.
//!
//! The crate covers the model and benchmark constraint, the canonical rotation that splits
//! the constrained and free directions, the estimators (direct, Bayes, EB, constrained
//! mean, constrained EB and the two canonical estimators), closed-form dominance
//! conditions, and a Monte Carlo harness for risk comparisons.

pub mod canonical;
pub mod conditions;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod montecarlo;

pub use canonical::{build_basis, build_frame, CanonicalBasis, CanonicalDesign, CanonicalFrame};
pub use error::{Error, Result};
pub use estimators::VarianceFit;
pub use estimators::{
    a_matrix, bayes_estimate, ceb_estimate, cm_estimate, constrain, direct_estimate, eb_estimate,
    fh_lambda_solve, gls_beta, uc1_estimate, uc2_estimate, Benchmarker, EstimateResult, Method,
};
pub use model::{
    loss_reduced_qw, projection_pw, validate, weighted_loss, BenchmarkSpec, FayHerriotModel,
    Observation, Projector, Target, ValidationReport, Violation,
};
