use thiserror::Error;

/// Errors produced by the registration library.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not a rotation: {reason}")]
    NotARotation { reason: String },

    #[error("covariance matrix is not positive semi-definite")]
    NotPsd,

    #[error("covariance is singular (Cholesky failed even with jitter)")]
    SingularCovariance,

    #[error("degenerate configuration: {reason}")]
    DegenerateConfiguration { reason: String },

    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
