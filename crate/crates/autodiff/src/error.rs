use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("batch norm in train mode needs at least two values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AutodiffError::Shape(msg.into()))
}
