use std::path::PathBuf;

/// Errors produced anywhere in the adaptation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum TtrlError {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("unknown question id {0}")]
    UnknownQuestion(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("response generated by snapshot {found}, expected snapshot {expected}")]
    SnapshotMismatch { expected: u64, found: u64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("every question has an unparseable pseudo-label; the policy is format-broken")]
    AllSkipped,

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TtrlError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        TtrlError::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TtrlError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        TtrlError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TtrlError>;
