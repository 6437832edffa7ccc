use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the samplers and their building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// `sigma_y = 0`; the exact likelihood is a Dirac and has no log-density.
    #[error("degenerate likelihood: measurement noise is zero")]
    DegenerateLikelihood,

    #[error("degenerate covariance at coordinate {index}")]
    DegenerateCovariance { index: usize },

    #[error("measurement operator is rank deficient and noiseless (singular value {index} is zero)")]
    RankDeficient { index: usize },

    #[error("all particle log-weights are -inf")]
    TotalDegeneracy,

    #[error("observation has zero probability under the prediction for variable {variable}")]
    ImpossibleEvidence { variable: usize },

    #[error("table of {size} outcomes exceeds the enumeration limit of {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("sequencing error: {0}")]
    Sequencing(&'static str),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<V, E = Error> = std::result::Result<V, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
