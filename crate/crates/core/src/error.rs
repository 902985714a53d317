use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode image: {0}")]
    Decode(String),
    #[error("failed to encode image: {0}")]
    Encode(String),
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bad magic number {0} in flow file")]
    BadMagic(f32),
    #[error("flow file payload has {actual} bytes, header implies {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("image of {width}x{height} is smaller than the {min}x{min} kernel")]
    TooSmall { width: usize, height: usize, min: usize },
    #[error("non-binary value {0} in line drawing")]
    NonBinary(f64),
    #[error("no counterpart for {0}")]
    Unmatched(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
