use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use inco_gateway::EndpointDescriptor;
use inco_harness::ExperimentSpec;

use crate::InputError;

/// Endpoints used by `--remote` runs. Tokens come from the environment
/// variable named in each endpoint's `token_env`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub policy: Option<EndpointDescriptor>,
    pub external: Option<EndpointDescriptor>,
    pub reward: Option<EndpointDescriptor>,
}

/// Top-level keys are experiment settings; `[gateway.*]` tables describe
/// remote endpoints.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Config {
    #[serde(flatten)]
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub gateway: GatewayConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        cfg.experiment.validate().context("invalid experiment settings")?;
        Ok(cfg)
    }

    pub fn endpoint(&self, role: &str) -> Result<&EndpointDescriptor> {
        let ep = match role {
            "policy" => &self.gateway.policy,
            "external" => &self.gateway.external,
            _ => &self.gateway.reward,
        };
        ep.as_ref()
            .ok_or_else(|| InputError(format!("config has no [gateway.{role}] endpoint")).into())
    }
}
