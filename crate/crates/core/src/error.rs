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

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate entry for {ch:?}")]
    DuplicateEntry { line: usize, ch: char },

    #[error("cannot decompose pinyin {0:?}: nothing left after the initial")]
    Decomposition(String),

    #[error("invalid pinyin mode for this operation: {0}")]
    InvalidMode(String),

    #[error("character {0:?} has no confusion class")]
    NoClass(char),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("id {id} out of range for table {table} (size {size})")]
    IndexOutOfRange {
        table: String,
        id: usize,
        size: usize,
    },

    #[error("non-finite activation in layer {0}")]
    NumericOverflow(usize),

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error("data error: {0}")]
    Data(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
