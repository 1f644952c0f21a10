use std::io;

use thiserror::Error;

/// Errors from the file formats, configuration and harness.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("format error: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Core(#[from] inpaint_dpo_core::Error),
}

impl LabError {
    /// True for problems the caller can fix by changing flags or files.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            LabError::Config(_) | LabError::Core(inpaint_dpo_core::Error::Config(_))
        )
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
