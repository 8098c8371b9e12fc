use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes disagree along a named axis.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A hyperparameter or model configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// The caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// Attack-labelled data reached the bonafide-only training path.
    #[error("training-set contamination: {0}")]
    Contamination(String),

    #[error("manifest error at line {line}: {message}")]
    Manifest { line: u64, message: String },

    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }
}

/// Failures reading or writing the binary checkpoint format.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected PADCKPT1, found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("truncated checkpoint while reading {context}")]
    Truncated { context: String },

    #[error("dtype mismatch for {name}: stored code {found}, expected {expected}")]
    DtypeMismatch { name: String, found: u8, expected: u8 },

    #[error("invalid config block: {0}")]
    Config(String),

    #[error("unexpected parameter {0}")]
    UnknownParameter(String),

    #[error("missing parameter {0}")]
    MissingParameter(String),

    #[error("shape mismatch for {name}: stored {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },

    #[error("invalid utf-8 in {0}")]
    Utf8(String),
}
