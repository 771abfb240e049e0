use thiserror::Error;

/// Errors raised by estimation, canonical-form construction and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(&'static str),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("root bracketing failed after {doublings} doublings (upper bound {upper}, moment residual {residual})")]
    Bracket {
        doublings: u32,
        upper: f64,
        residual: f64,
    },

    #[error("estimator {estimator} is not defined for {case}")]
    CaseMismatch {
        estimator: &'static str,
        case: &'static str,
    },

    #[error("invalid model: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
