use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SpearError> = std::result::Result<T, E>;

/// Errors raised across the pipeline.
///
/// The variants group into the three failure classes the CLI maps onto exit
/// codes: configuration problems, data problems and numeric failures.
#[derive(Debug, Error)]
pub enum SpearError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("{0}")]
    NotApplicable(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl SpearError {
    pub fn class(&self) -> ErrorClass {
        match self {
            SpearError::Config(_) => ErrorClass::Config,
            SpearError::Numeric(_) | SpearError::NonFinite { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpearError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        SpearError::Csv {
            path: path.into(),
            source,
        }
    }
}
