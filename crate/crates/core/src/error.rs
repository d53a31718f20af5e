use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label out of range: {label} (max {max})")]
    LabelOutOfRange { label: usize, max: usize },
    #[error("IPM undefined: batch contains a single treatment group")]
    SingleGroup,
    #[error("PEHE unavailable on factual-only data")]
    MissingPotentials,
    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("size {size} exceeds cap {cap}")]
    SizeOverCap { size: usize, cap: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
