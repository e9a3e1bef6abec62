//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced during validation, fitting, and I/O.
#[derive(Debug, Error)]
pub enum SvbrError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SvbrError {
    pub fn validation(msg: impl Into<String>) -> Self {
        SvbrError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        SvbrError::Numerical(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        SvbrError::Config(msg.into())
    }

    /// Process exit code for the CLI: 2 for bad inputs, 3 for numerical
    /// failures during sampling.
    pub fn exit_code(&self) -> i32 {
        match self {
            SvbrError::Numerical(_) => 3,
            _ => 2,
        }
    }

    /// Stable machine-readable kind string.
    pub fn kind(&self) -> &'static str {
        match self {
            SvbrError::Validation(_) => "validation",
            SvbrError::Numerical(_) => "numerical",
            SvbrError::Config(_) => "config",
            SvbrError::Io(_) => "io",
            SvbrError::Csv(_) => "csv",
            SvbrError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, SvbrError>;
