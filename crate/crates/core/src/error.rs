//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (dimension mismatch, empty bag, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss became non-finite")]
    TrainingDiverged { step: usize },

    /// Document ids must strictly increase under append-only updates.
    #[error("append-order violation: doc id {got} does not exceed existing max {last}")]
    AppendOrderViolation { last: u64, got: u64 },

    /// A binary artifact failed to parse or failed its integrity check.
    #[error("corrupt file ({section}): {detail}")]
    CorruptFile { section: String, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn corrupt(section: &str, detail: impl Into<String>) -> Self {
        Error::CorruptFile {
            section: section.to_string(),
            detail: detail.into(),
        }
    }
}
