use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("index {index} out of bounds for {len} rows")]
    Bounds { index: usize, len: usize },

    #[error("protocol order violated: {0}")]
    ProtocolOrder(String),

    #[error("id alignment failed: {0}")]
    Alignment(String),

    #[error("unlearning diverged at epoch {epoch}: non-finite parameters")]
    Divergence { epoch: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("incompatible version: expected {expected}, found {found}")]
    Incompatible { expected: u32, found: u32 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

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

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::Error::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
