use std::path::PathBuf;

use noisecond_core::Error as CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("refusing to overwrite {0} (pass --force)")]
    RefusingOverwrite(PathBuf),
    #[error("{failed} of {total} checks failed")]
    VerificationFailed { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 0 success, 2 usage, 3 data, 4 numeric failure, 5 verification failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::RefusingOverwrite(_) => 2,
            CliError::VerificationFailed { .. } => 5,
            CliError::Core(CoreError::NumericFailure { .. }) => 4,
            CliError::Core(CoreError::InvalidConfig(_)) => 2,
            CliError::Core(_) => 3,
        }
    }
}
