use thiserror::Error;

use crate::autodiff::AdError;
use crate::checkpoint::CheckpointError;
use crate::data::DataError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("width mismatch: expected {expected} features, got {got}")]
    Width { expected: usize, got: usize },
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("non-finite {term}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { term: String, step: Option<usize> },
    #[error("{op} is not available for {mode} models")]
    WrongMode { op: &'static str, mode: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn non_finite(term: impl Into<String>) -> Self {
        Error::NonFinite {
            term: term.into(),
            step: None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
