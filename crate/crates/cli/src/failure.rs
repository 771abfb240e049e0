use std::fmt;

use fhbench::Error;

/// Process exit status paired with the error that caused it.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const INPUT: u8 = 2;
pub const VALIDATION: u8 = 3;
pub const NUMERICAL: u8 = 4;

impl Failure {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: INPUT,
            error: error.into(),
        }
    }

    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: VALIDATION,
            error: error.into(),
        }
    }

    pub fn numerical(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: NUMERICAL,
            error: error.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Dimension(_) | Error::NonFinite(_) | Error::CaseMismatch { .. } => INPUT,
            Error::Assumption(_) | Error::Invalid(_) => VALIDATION,
            Error::Singular(_) | Error::Bracket { .. } => NUMERICAL,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::input(e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self::input(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::input(e)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;
