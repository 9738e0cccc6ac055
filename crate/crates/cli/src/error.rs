use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: row {row}: covariance is not positive semi-definite")]
    NotPsd { path: PathBuf, row: usize },

    #[error("invalid arguments: {0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] anireg_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("manifest serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code classification: bad inputs/flags vs failures at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Parse { .. }
            | PipelineError::NotPsd { .. }
            | PipelineError::Validation(_) => 1,
            PipelineError::Core(e) => match e {
                anireg_core::Error::InvalidConfig(_)
                | anireg_core::Error::InsufficientPoints { .. }
                | anireg_core::Error::LengthMismatch { .. }
                | anireg_core::Error::NotARotation { .. }
                | anireg_core::Error::NotPsd => 1,
                _ => 2,
            },
            PipelineError::Io { .. } | PipelineError::Json(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
