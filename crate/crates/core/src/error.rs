use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    Shape { left: Vec<usize>, right: Vec<usize> },

    #[error("index {index:?} out of bounds for dims {dims:?}")]
    Index { index: Vec<usize>, dims: Vec<usize> },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("inconsistent CP model: {0}")]
    Model(String),

    /// Relative error against a truth tensor whose Frobenius norm is zero.
    #[error("reference tensor has zero norm")]
    ZeroNorm,

    #[error("invalid data: {0}")]
    Data(String),

    /// A covariance system that stayed indefinite after jitter escalation.
    #[error("system matrix for mode {mode}, row {row} is not positive definite")]
    NotPositiveDefinite { mode: usize, row: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("linear operator failed the adjoint check (relative gap {gap:e})")]
    Adjoint { gap: f64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: index {index:?} outside dims {dims:?}")]
    Bounds { line: usize, index: Vec<usize>, dims: Vec<usize> },

    #[error("line {line}: duplicate index {index:?} (first seen on line {first})")]
    Duplicate { line: usize, first: usize, index: Vec<usize> },

    #[error("malformed report: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
