use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FedFgError> = std::result::Result<T, E>;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum FedFgError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parameter layout mismatch in {0}")]
    LayoutMismatch(&'static str),

    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("IDX parse error: {0}")]
    Idx(#[from] IdxError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("privacy boundary violated: segment `{segment}` found in {location}")]
    PrivacyViolation { segment: String, location: String },
}

impl FedFgError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FedFgError::InvalidInput(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        FedFgError::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FedFgError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while decoding IDX image/label files.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },

    #[error("file truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("label {label} out of range (class count {classes})")]
    LabelOutOfRange { label: u8, classes: usize },
}
