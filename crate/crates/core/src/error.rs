use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: XML parse error at line {line}: {message}")]
    Parse { path: PathBuf, line: u32, message: String },

    #[error("{path}: missing attribute `{attribute}` on <{element}> (line {line})")]
    Schema { path: PathBuf, element: String, attribute: String, line: u32 },

    #[error("resampling error: {0}")]
    Resampling(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("filter diverged: {0}")]
    FilterDivergence(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format { path: path.into(), message: message.to_string() }
    }
}
