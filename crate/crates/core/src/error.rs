use thiserror::Error;

use crate::tensor::Shape4;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{op}: {msg}")]
    Geometry { op: &'static str, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid block: {0}")]
    InvalidBlock(String),

    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unknown label value {0} (expected one of 0, 1, 2, 4)")]
    UnknownLabel(u8),

    #[error("mask is not binary: found value {0}")]
    NonBinaryMask(u8),

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("extent overflow: {height}x{width} exceeds the supported size")]
    ExtentOverflow { height: u64, width: u64 },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shapes(op: &'static str, left: Shape4, right: Shape4) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// Attaches a file path to an error raised while reading or writing it.
    pub fn at_path(self, path: &std::path::Path) -> Self {
        Error::File {
            path: path.display().to_string(),
            source: Box::new(self),
        }
    }

    /// Strips any path context.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
