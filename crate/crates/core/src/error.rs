use std::path::PathBuf;

use thiserror::Error;

use crate::model::StackDims;

/// Errors raised while building domain values or reading/writing pool files.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("payload truncated")]
    TruncatedPayload,
    #[error("{0} trailing bytes after payload")]
    TrailingData(u64),
    #[error("probability out of [0, 1] at position {position}")]
    ValueOutOfRange { position: usize },
    #[error("non-finite value in embedding {id:?} at position {position}")]
    NonFinite { id: String, position: usize },
    #[error("embedding {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        index: usize,
    },
    #[error("embedding {0:?} has dimension 0")]
    EmptyEmbedding(String),
    #[error("stack dimensions must all be >= 1, got {0:?}")]
    EmptyDimension(StackDims),
    #[error("expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("{0} does not fit the on-disk header")]
    TooLarge(String),
    #[error("invalid image id: {0}")]
    InvalidId(String),
}

impl ModelError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.into(),
            source,
        }
    }
}
