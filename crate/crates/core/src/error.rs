use thiserror::Error;

use crate::quantile_tree::TreeError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{count} classes exceeds the limit of {limit}")]
    TooManyClasses { count: usize, limit: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("class {0} is already in the set")]
    ClassInSet(usize),
    #[error("{0} has no closed-form proxy; use a Monte-Carlo proxy")]
    NoAnalyticProxy(&'static str),
    #[error("universe is not sorted by proxy cost at position {0}")]
    UnsortedUniverse(usize),
    #[error("universe must start with the empty set at zero proxy cost")]
    MissingEmptySet,
    #[error("no calibration samples observed yet")]
    NoCalibrationData,
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("line {line}: {message}")]
    Data { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
