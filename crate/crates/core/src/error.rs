use std::path::PathBuf;

use noisecond_autodiff::AutodiffError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {0}")]
    InputTooShort(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("split violation: {0}")]
    SplitViolation(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint was written for config {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NumericFailure { step: u64, detail: String },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("all {count} evaluation pairs failed; first: {first}")]
    AllPairsFailed { count: usize, first: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
