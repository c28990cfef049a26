use thiserror::Error;

use crate::autodiff::AdError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] AdError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} ({detail}); try a lower learning rate")]
    Diverged { epoch: usize, batch: usize, detail: String },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by numerics rather than inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::NonFiniteGradient(_) | Error::Graph(AdError::NonFinite { .. })
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
