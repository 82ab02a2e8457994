use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the segmentation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("AUC is undefined: labels contain a single class")]
    UndefinedAuc,

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Image decoding failures.
#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("unsupported image format: {0}")]
    Unsupported(String),

    #[error("truncated image data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("bit depth {0} exceeds 8 bits")]
    BitDepth(u32),

    #[error("malformed header: {0}")]
    Header(String),
}

/// Checkpoint loading failures.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    Magic([u8; 4]),

    #[error("unsupported checkpoint version {0}")]
    Version(u16),

    #[error("checkpoint was written for a different network spec")]
    SpecMismatch,

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint parameter mismatch: {0}")]
    Parameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
