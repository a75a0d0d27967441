use thiserror::Error;

use crate::qp::QpStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid setting: {0}")]
    InvalidSetting(String),

    #[error("setting too large: {combinations} assignment combinations exceed the cap of {cap}")]
    EnumerationTooLarge { combinations: u128, cap: u128 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("payment rule {rule} is not available here: {reason}")]
    RuleUnsupported { rule: &'static str, reason: String },

    #[error("sample {index}: {source}")]
    Sample { index: usize, source: Box<Error> },

    #[error("quadratic program ended with status {status:?} (kkt residual {residual:.3e})")]
    Solver { status: QpStatus, residual: f64 },

    #[error("Q is not symmetric positive semidefinite")]
    NotPsd,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    InvalidConfig(Vec<String>),

    #[error("BNE oracle failed validation: {0}")]
    OracleValidation(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration { iteration: usize, source: Box<Error> },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
