use std::path::PathBuf;

use crate::clients::ClientError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Client(#[from] ClientError),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("integrity error: {path}: expected hash {expected}, found {found}")]
    Integrity {
        path: String,
        expected: String,
        found: String,
    },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("undefined AUC: {0}")]
    UndefinedAuc(String),

    #[error("score error: {0}")]
    Score(String),

    #[error("schema error at {path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
