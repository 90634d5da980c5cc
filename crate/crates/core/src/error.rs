use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: line {line} is not valid UTF-8", path.display())]
    Utf8 { path: PathBuf, line: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token id {id} is outside a vocabulary of {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("vocabulary mismatch: model expects {expected}, corpus was encoded with {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: u64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
