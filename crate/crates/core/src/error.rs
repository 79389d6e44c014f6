use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis}: {detail}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        detail: String,
    },

    #[error("batch_norm: insufficient statistics ({count} values per channel, need at least 2)")]
    InsufficientStatistics { count: usize },

    #[error("tape already consumed by a previous backward pass")]
    ConsumedTape,

    #[error("backward requires a training-mode tape and a scalar loss that depends on recorded inputs")]
    NotTraining,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("configuration mismatch: expected hash {expected:016x}, found {found:016x}")]
    ConfigMismatch { expected: u64, found: u64 },

    #[error("{what}: expected {expected}, found {found}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-binary spike tensor at {0}")]
    NotBinary(String),

    #[error("state belongs to a different tape; call reset_states before starting a new sequence")]
    StaleState,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("bad file format in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            axis,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 1 usage/config, 2 data or i/o, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::ConfigMismatch { .. } | Error::CountMismatch { .. } => 1,
            Error::NonFinite(_) | Error::NotBinary(_) | Error::InsufficientStatistics { .. } => 3,
            Error::Dimension { .. } | Error::ConsumedTape | Error::NotTraining | Error::StaleState => 3,
            Error::Empty(_) | Error::Format { .. } | Error::Io { .. } | Error::Json(_) => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
