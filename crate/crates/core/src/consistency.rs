//! Consistency weight: how "on-policy" a response looks to a policy.
//!
//! Each token contributes the ratio of its probability to the collision
//! probability `Σ_v π(v)²` of the distribution it was drawn against; the
//! weight is the geometric mean of those ratios. Distributions are always
//! taken at temperature 1, whatever temperature produced the response.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::policy::{softmax, PolicyHandle, TabularLM};
use crate::types::{Prompt, Response, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyWeight {
    pub value: f64,
    pub per_token_ratio: Vec<f64>,
    /// Set when some token had zero probability; `value` is then 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

pub fn token_ratio(dist: &[f64], token: TokenId) -> Result<f64> {
    let p = *dist.get(token as usize).ok_or(Error::InvalidToken {
        token,
        size: dist.len(),
    })?;
    let collision: f64 = dist.iter().map(|q| q * q).sum();
    Ok(p / collision)
}

/// Geometric mean of per-token ratios; zero when any ratio is zero.
pub fn geometric_mean(ratios: &[f64]) -> f64 {
    match ratios {
        [] => return f64::NAN,
        [only] => return *only,
        _ => {}
    }
    let mean_log = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
    mean_log.exp()
}

pub fn consistency_weight(lm: &TabularLM, prompt: &[TokenId], response: &[TokenId]) -> Result<ConsistencyWeight> {
    if response.is_empty() {
        return invalid("response must be non-empty");
    }
    let rows = lm.visited_rows(prompt, response)?;
    let mut ratios = Vec::with_capacity(response.len());
    for (&row, &t) in rows.iter().zip(response) {
        ratios.push(token_ratio(&softmax(lm.row(row), 1.0), t)?);
    }
    let diagnostic = ratios
        .iter()
        .position(|&r| r == 0.0)
        .map(|i| format!("token {} at position {i} has zero probability under the policy", response[i]));
    let value = if diagnostic.is_some() {
        0.0
    } else {
        geometric_mean(&ratios)
    };
    Ok(ConsistencyWeight {
        value,
        per_token_ratio: ratios,
        diagnostic,
    })
}

/// Weight of a provenance-tagged response under any policy handle.
///
/// Remote policies and text responses cannot supply full-vocabulary
/// distributions, so they yield [`Error::WeightUnavailable`].
pub fn response_weight(policy: &PolicyHandle, prompt: &Prompt, response: &Response) -> Result<ConsistencyWeight> {
    let lm = match policy {
        PolicyHandle::Tabular(lm) => lm,
        PolicyHandle::Remote(remote) => {
            return Err(Error::WeightUnavailable(format!(
                "remote policy {} exposes no full distributions",
                remote.model_id
            )))
        }
    };
    match (prompt.tokens(), response.is_text()) {
        (Some(prompt), false) => consistency_weight(lm, prompt, &response.tokens),
        _ => Err(Error::WeightUnavailable("text response has no token ids".into())),
    }
}
