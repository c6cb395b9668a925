use thiserror::Error;

use crate::photon_sim::Basis;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A row of the measurement matrix has no counts. Callers should
    /// accumulate more pulses and retry.
    #[error("{basis} basis: row for sent state {row} has no counts")]
    EmptyRow { basis: Basis, row: &'static str },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined scenario: {0}")]
    UndefinedScenario(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
