//! Error type shared across the crate.
//!
//! Variants are grouped by what the caller can do about them: bad inputs
//! (`Config`), malformed or inconsistent trace data (`Data`), and numerical
//! failures inside the samplers and optimizers (`Numerical`). The CLI maps
//! these groups onto distinct exit codes.

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or argument values.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed, inconsistent, or missing input data.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure: degenerate likelihood, non-finite state, fit failure.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }
    pub fn data(msg: impl fmt::Display) -> Self {
        Error::Data(msg.to_string())
    }
    pub fn numerical(msg: impl fmt::Display) -> Self {
        Error::Numerical(msg.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
