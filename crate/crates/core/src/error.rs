use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("subject {subject_id}: {message}")]
    Rejected { subject_id: String, message: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid template: {0}")]
    Template(String),

    #[error("label word {word:?} maps to {token_count} tokens, expected exactly 1")]
    Verbalizer { word: String, token_count: usize },

    #[error("label word {0:?} is not in the vocabulary")]
    UnknownLabelWord(String),

    #[error("input of length {len} exceeds backend max length {max_len}")]
    InputTooLong { len: usize, max_len: usize },

    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    OutOfVocab { id: u32, vocab_size: usize },

    #[error("non-finite gradient in parameter group {group}")]
    NonFiniteGradient { group: String },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("training failed at epoch {epoch}, record {record}: {source}")]
    Training {
        epoch: usize,
        record: String,
        #[source]
        source: Box<Error>,
    },

    #[error("run with seed {seed} failed: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
