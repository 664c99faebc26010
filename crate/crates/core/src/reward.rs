//! Reward scoring: the scoring contract, the gold-model oracle used at
//! desk scale, and partial-response scoring.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::policy::TabularLM;
use crate::types::{Prompt, Response, SampleSet, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub value: f64,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_at: Option<usize>,
}

/// Anything that assigns a scalar reward to a (prompt, response) pair.
pub trait RewardModel {
    fn model_id(&self) -> String;

    fn score(&self, prompt: &Prompt, response: &Response) -> Result<RewardScore>;
}

/// Oracle reward: length-normalized log-probability under a frozen gold
/// model plus a per-token bonus capped at `target_len` tokens.
#[derive(Debug, Clone)]
pub struct GoldReward {
    gold: TabularLM,
    pub length_bonus: f64,
    pub target_len: usize,
}

impl GoldReward {
    pub fn new(gold: TabularLM, length_bonus: f64, target_len: usize) -> Result<Self> {
        if target_len == 0 {
            return invalid("target_len must be positive");
        }
        if !length_bonus.is_finite() {
            return invalid("length_bonus must be finite");
        }
        Ok(Self {
            gold,
            length_bonus,
            target_len,
        })
    }

    pub fn gold(&self) -> &TabularLM {
        &self.gold
    }

    /// Reward of a token sequence given the total gold log-probability.
    pub fn value_from_logprob(&self, total_logprob: f64, len: usize) -> f64 {
        total_logprob / len as f64 + self.length_bonus * len.min(self.target_len) as f64
    }

    pub fn score_tokens(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<RewardScore> {
        let (total, _) = self.gold.sequence_logprob(prompt, response)?;
        Ok(RewardScore {
            value: self.value_from_logprob(total, response.len()),
            model_id: self.model_id(),
            partial_at: None,
        })
    }

    /// Scores the first `min(k, |y|)` tokens. Responses no longer than `k`
    /// get exactly their full score.
    pub fn score_partial(&self, prompt: &[TokenId], response: &[TokenId], k: usize) -> Result<RewardScore> {
        if k == 0 {
            return invalid("truncation length must be at least 1");
        }
        let cut = &response[..k.min(response.len())];
        let mut score = self.score_tokens(prompt, cut)?;
        score.partial_at = Some(k);
        Ok(score)
    }

    pub fn score_sample_set(&self, set: &SampleSet) -> Result<SampleSet> {
        score_sample_set(self, set)
    }
}

impl RewardModel for GoldReward {
    fn model_id(&self) -> String {
        format!("gold-{:016x}", self.gold.lineage())
    }

    fn score(&self, prompt: &Prompt, response: &Response) -> Result<RewardScore> {
        match prompt.tokens() {
            Some(prompt) if !response.is_text() => self.score_tokens(prompt, &response.tokens),
            _ => invalid("gold reward needs token prompts and token responses"),
        }
    }
}

/// Fills `rewards` for every response, preserving order.
pub fn score_sample_set<R: RewardModel + ?Sized>(rm: &R, set: &SampleSet) -> Result<SampleSet> {
    if set.responses.is_empty() {
        return invalid(format!("sample set {} is empty", set.instruction_id));
    }
    let rewards = set
        .responses
        .iter()
        .enumerate()
        .map(|(i, r)| rm.score(&set.prompt, r).map(|s| s.value).map_err(Error::at(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut scored = set.clone();
    scored.rewards = Some(rewards);
    Ok(scored)
}
