use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },

    #[error("empty vocabulary: no token reaches min_freq={min_freq}")]
    EmptyVocabulary { min_freq: usize },

    #[error("empty text")]
    EmptyText,

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid hyperparameters: {0}")]
    HyperParams(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("CCA: {0}")]
    Cca(String),

    #[error("encoder: {0}")]
    Encoder(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("unknown {what}: `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("{0}")]
    Search(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by bad input data rather than a failed run.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Schema { .. }
                | Error::EmptyVocabulary { .. }
                | Error::EmptyText
                | Error::Data(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Checkpoint { .. }
        )
    }
}
