use thiserror::Error;

/// Errors raised by the estimators, operators and pipelines.
#[derive(Debug, Error)]
pub enum KronError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: need at least {required} samples, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("zero-norm sample at index {0}")]
    ZeroSample(usize),

    #[error("{0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, KronError>;

pub(crate) fn shape_err(expected: (usize, usize), actual: (usize, usize)) -> KronError {
    KronError::DimensionMismatch {
        expected: format!("{}x{}", expected.0, expected.1),
        actual: format!("{}x{}", actual.0, actual.1),
    }
}
