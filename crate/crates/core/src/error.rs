use thiserror::Error;

/// Errors raised by model evaluation, data handling and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input")]
    NonFinite,
    #[error("empty sequence")]
    EmptySequence,
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("shape not divisible: {0}")]
    NotDivisible(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("unsupported window length: model expects {expected} frames, got {got}")]
    UnsupportedWindow { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("diverged at step {step}: {what}")]
    Diverged { step: u64, what: String },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unsupported dtype {0}")]
    BadDtype(u8),
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
