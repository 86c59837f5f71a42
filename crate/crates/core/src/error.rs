use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{origin}: parse error: {message}")]
    Parse { origin: String, message: String },

    #[error("{origin}: invalid {record}: {message}")]
    Validation {
        origin: String,
        record: String,
        message: String,
    },

    #[error("{origin}: truncated: expected {expected} bytes, found {actual}")]
    Truncated {
        origin: String,
        expected: u64,
        actual: u64,
    },

    #[error("{} detection(s) have no feature row: {}", missing.len(), missing.join(", "))]
    Binding { missing: Vec<String> },

    #[error("{} detection(s) carry no feature vector: {}", ids.len(), ids.join(", "))]
    MissingFeatures { ids: Vec<String> },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("covariance is singular: {0}; pass a positive regularization (--epsilon)")]
    Singular(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn validation(
        origin: impl Into<String>,
        record: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            origin: origin.into(),
            record: record.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// `true` for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular(_))
    }
}
