use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training requires both classes, got only {0:+}")]
    SingleClass(i8),

    #[error("empty reduced set: {0}")]
    EmptyReducedSet(String),

    #[error("stale matching: {0}")]
    StaleMatching(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("timed out: {0}")]
    Timeout(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(row: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            row,
            msg: msg.into(),
        }
    }
}
