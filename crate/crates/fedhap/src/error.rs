//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad dimensions, empty partitions, bad flags).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an API contract (mismatched tape, wrong vector length).
    #[error("usage error: {0}")]
    Usage(String),

    /// Numerical failure during training (non-finite loss or gradient).
    #[error("training error: {0}")]
    Training(String),

    /// Mathematical domain violation (e.g. cosine distance of a zero vector).
    #[error("domain error: {0}")]
    Domain(String),

    /// Violation of the round protocol (missing or duplicate uploads).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Dataset file could not be parsed; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
