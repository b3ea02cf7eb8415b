use alloc::string::String;

use crate::data::SampleId;

/// Errors raised by the acquisition core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("row {row}, column `{column}`: {reason}")]
    Cell {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("continuous column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("partition would leave the {0} set empty")]
    EmptySplit(&'static str),
    #[error("sample {0} is not in the pool")]
    NotInPool(SampleId),
    #[error("no training samples in the {0} arm")]
    EmptyArm(&'static str),
    #[error("kernel matrix not positive definite after jitter {0:e}")]
    NotPositiveDefinite(f64),
    #[error("{0} requires a non-empty set")]
    EmptySet(&'static str),
    #[error("estimator `{0}` cannot predict factual outcomes, which the outcome-error strategy requires")]
    MissingCapability(String),
    #[error("need at least {needed} values, found {found}")]
    TooFewValues { needed: usize, found: usize },
    #[error("training diverged: non-finite loss")]
    Diverged,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
