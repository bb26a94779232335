use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("backward already ran on this tape")]
    BackwardConsumed,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint head type mismatch: expected {expected}, found {found}")]
    HeadMismatch { expected: String, found: String },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("missing artifact: {what} (hint: {hint})")]
    Missing { what: String, hint: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
