use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, Result};

/// Where and how to reach one remote model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointDescriptor {
    /// Scheme, host and port, e.g. `http://127.0.0.1:8000`.
    pub base_url: String,
    /// Name of the environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_concurrent: usize,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
    /// Wrapped around the prompt before any injected prefix, for chat templates.
    pub prompt_prefix: String,
    pub prompt_suffix: String,
    pub completion_path: String,
    pub score_path: String,
}

impl Default for EndpointDescriptor {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            token_env: None,
            model: "default".into(),
            timeout_ms: 30_000,
            max_retries: 3,
            max_concurrent: 8,
            backoff_ms: 200,
            prompt_prefix: String::new(),
            prompt_suffix: String::new(),
            completion_path: "/v1/completions".into(),
            score_path: "/v1/score".into(),
        }
    }
}

impl EndpointDescriptor {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config("timeout must be positive".into()));
        }
        if self.max_concurrent == 0 {
            return Err(GatewayError::Config("max_concurrent must be positive".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(GatewayError::Config(format!("base_url {:?} is not http(s)", self.base_url)));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16)))
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }

    /// Reads the bearer token from the environment, if one is configured.
    pub fn token(&self) -> Result<Option<String>> {
        match &self.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| GatewayError::Config(format!("environment variable {var} is not set"))),
        }
    }

    /// Text sent as the completion prompt: wrapper, prompt, wrapper, prefix.
    pub fn wrap(&self, prompt_text: &str, prefix_text: &str) -> String {
        format!("{}{}{}{}", self.prompt_prefix, prompt_text, self.prompt_suffix, prefix_text)
    }
}
