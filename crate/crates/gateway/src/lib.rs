//! Clients for remote completion and reward-scoring endpoints speaking the
//! common JSON completion shape, plus a bundled stub server.

pub mod client;
pub mod endpoint;
pub mod error;
pub mod log;
pub mod stub;

pub use client::{remote_complete, remote_score, Gateway};
pub use endpoint::EndpointDescriptor;
pub use error::{GatewayError, Result};
pub use log::{LogEntry, Outcome, RequestLog};
pub use stub::{StubConfig, StubScore, StubServer};
