use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("unknown sequence id: {0}")]
    UnknownSequence(String),
    #[error("unknown utterance: {0}")]
    UnknownUtterance(String),
    #[error("missing upstream stage: {0}")]
    MissingStage(String),
    #[error("logic error: {0}")]
    Logic(String),
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AudError>;
