use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("request {request_id} failed after {attempts} attempts: {message}")]
    Exhausted {
        request_id: u64,
        attempts: u32,
        message: String,
    },
    #[error("request {request_id}: protocol error: {message}")]
    Protocol { request_id: u64, message: String },
    #[error(transparent)]
    Core(#[from] inco_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GatewayError>;
