use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric error at step {step}: {message}")]
    Numeric { step: usize, message: String },

    #[error("observable not ready: {0}")]
    Stale(String),

    #[error("undefined observable: {0}")]
    Undefined(String),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Geometry(_) => "geometry",
            Error::Dimension(_) => "dimension",
            Error::Numeric { .. } => "numeric",
            Error::Stale(_) => "stale",
            Error::Undefined(_) => "undefined",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }
}
