use thiserror::Error;

/// Errors produced by the library operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdqError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("invalid sparsity pattern {n}:{m}: {reason}")]
    InvalidPattern { n: usize, m: usize, reason: String },

    #[error("row {row}, block {block} holds {nonzeros} nonzeros, pattern allows {n}")]
    PatternViolation {
        row: usize,
        block: usize,
        nonzeros: usize,
        n: usize,
    },

    #[error("invalid number format: {0}")]
    InvalidFormat(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("hessian is not positive definite at pivot {pivot} even with damping")]
    SingularHessian { pivot: usize },

    #[error("config parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("inconsistent config: {0}")]
    Inconsistent(String),

    #[error("container error: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, SdqError>;
