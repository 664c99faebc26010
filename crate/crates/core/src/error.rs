use thiserror::Error;

/// Errors produced by the synthesis and training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("token id {token} out of range for vocabulary of size {size}")]
    InvalidToken { token: u32, size: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("consistency weight unavailable: {0}")]
    WeightUnavailable(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("item {index}: {source}")]
    Item {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at(index: usize) -> impl FnOnce(Error) -> Error {
        move |source| Error::Item {
            index,
            source: Box::new(source),
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
