use thiserror::Error;

/// Errors produced by the workbench.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("capacity exceeded: {what} needs {needed}, limit is {limit}")]
    Capacity {
        what: String,
        needed: usize,
        limit: usize,
    },
    #[error("sets not contained in an open half-space: {0}")]
    NotHalfSpace(String),
    #[error("window margin too small: need {needed}, have {have}")]
    Margin { needed: i64, have: i64 },
    #[error("undecided: {0}")]
    Undecided(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
