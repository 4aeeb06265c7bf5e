use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation toolkit.
#[derive(Debug, Error)]
pub enum DseError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("state became non-finite: {0}")]
    NonFiniteState(String),

    #[error("equilibrium search did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: {left} estimates vs {right} truth samples")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("filter step {step}: {source}")]
    FilterStep {
        step: usize,
        #[source]
        source: Box<DseError>,
    },

    #[error("ensemble member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<DseError>,
    },

    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<DseError>,
    },
}

impl DseError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DseError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(origin: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        DseError::Parse {
            origin: origin.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, DseError>;
