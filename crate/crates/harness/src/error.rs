use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("correlation is undefined for a constant series")]
    UndefinedCorrelation,
    #[error(transparent)]
    Core(#[from] inco_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Input(msg.into()))
}
