//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for every pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    /// A record, label sequence, or parameter set failed validation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of range or internally inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Two artifacts that must agree (lengths, ids, shapes) do not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// A numeric routine produced or encountered a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file had the wrong format or version tag.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Shorthand for an [`Error::InvalidInput`] built from anything printable.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
