use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("truncated stream: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("invalid dimensions {width}x{height}: {reason}")]
    Dimensions { width: usize, height: usize, reason: &'static str },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("symbol {symbol} outside model support")]
    SymbolOutOfRange { symbol: i64 },
    #[error("bitstream format error: {0}")]
    Format(String),
    #[error("crc mismatch in frame {frame}: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { frame: usize, stored: u32, computed: u32 },
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
