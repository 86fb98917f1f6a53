//! Error types shared across the crate.

use thiserror::Error;

/// Errors surfaced by training, configuration, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or malformed config file.
    #[error("config error: {0}")]
    Config(String),

    /// A runtime invariant was violated (programming or state error).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A loss, gradient, or ratio became non-finite; the run must halt.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that should map to the "bad configuration" exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
