use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(
        "no sequences left after filtering (min_seq_len = {min_seq_len}, min_item_freq = {min_item_freq})"
    )]
    EmptyAfterFiltering { min_seq_len: usize, min_item_freq: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for a table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (users {users:?})")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64, users: Vec<usize> },

    #[error("corrupt checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { what: what.into(), detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
