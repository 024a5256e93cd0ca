use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum DimpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("infinite signal-to-noise ratio at step {0} (alpha_bar = 1)")]
    InfiniteSnr(usize),

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("version mismatch in {path}: expected {expected}, found {found}")]
    VersionMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DimpError>;

impl DimpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DimpError::InvalidArgument(msg.into())
    }

    /// Process exit code: 2 for configuration and validation problems,
    /// 3 for numeric aborts, 4 for incompatible artifacts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            DimpError::InvalidArgument(_) | DimpError::ShapeMismatch { .. } | DimpError::Config { .. } => 2,
            DimpError::NonFinite { .. } | DimpError::InfiniteSnr(_) => 3,
            DimpError::VersionMismatch { .. } | DimpError::MissingParameter(_) | DimpError::Incompatible(_) => 4,
            DimpError::CorruptFile { .. } | DimpError::Io { .. } | DimpError::Json(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DimpError::Io {
            path: path.into(),
            source,
        }
    }
}
