//! Preference-pair construction from scored sample sets.

use serde::{Deserialize, Serialize};

use crate::consistency::consistency_weight;
use crate::error::{invalid, Result};
use crate::policy::TabularLM;
use crate::types::{PreferencePair, SampleSet};

/// Which on-policy sample the forced off-policy strategy rejects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RejectSelection {
    #[default]
    BestOnPolicy,
    WorstOnPolicy,
}

/// First index of the maximum (`max = true`) or minimum reward.
fn extreme(rewards: &[f64], max: bool) -> usize {
    let mut best = 0;
    for (i, &r) in rewards.iter().enumerate().skip(1) {
        let better = if max { r > rewards[best] } else { r < rewards[best] };
        if better {
            best = i;
        }
    }
    best
}

fn make_pair(chosen_set: &SampleSet, chosen: usize, rejected_set: &SampleSet, rejected: usize) -> Result<PreferencePair> {
    let cw = chosen_set.rewards()?;
    let rw = rejected_set.rewards()?;
    Ok(PreferencePair {
        instruction_id: chosen_set.instruction_id.clone(),
        prompt: chosen_set.prompt.clone(),
        chosen: chosen_set.responses[chosen].clone(),
        rejected: rejected_set.responses[rejected].clone(),
        chosen_reward: cw[chosen],
        rejected_reward: rw[rejected],
        chosen_weight: chosen_set.weights.as_ref().map(|w| w[chosen]),
        rejected_weight: rejected_set.weights.as_ref().map(|w| w[rejected]),
    })
}

/// Highest- versus lowest-reward response, ties going to the lowest index.
/// Returns `None` when every reward is equal.
pub fn pair_unconstrained(set: &SampleSet) -> Result<Option<PreferencePair>> {
    let rewards = set.rewards()?;
    if rewards.len() < 2 {
        return invalid(format!("sample set {} needs at least two responses", set.instruction_id));
    }
    let hi = extreme(rewards, true);
    let lo = extreme(rewards, false);
    if rewards[hi] == rewards[lo] {
        return Ok(None);
    }
    make_pair(set, hi, set, lo).map(Some)
}

/// Best off-policy response as chosen against an on-policy response as
/// rejected; filtered out unless the off-policy reward is strictly higher.
pub fn pair_forced_offpolicy(
    on: &SampleSet,
    off: &SampleSet,
    selection: RejectSelection,
) -> Result<Option<PreferencePair>> {
    if on.instruction_id != off.instruction_id {
        return invalid(format!(
            "instruction mismatch: {} vs {}",
            on.instruction_id, off.instruction_id
        ));
    }
    let on_rewards = on.rewards()?;
    let off_rewards = off.rewards()?;
    let chosen = extreme(off_rewards, true);
    let rejected = extreme(on_rewards, selection == RejectSelection::BestOnPolicy);
    if off_rewards[chosen] <= on_rewards[rejected] {
        return Ok(None);
    }
    make_pair(off, chosen, on, rejected).map(Some)
}

pub fn reward_margin(pair: &PreferencePair) -> f64 {
    pair.margin()
}

/// Fills both consistency weights under `policy`. Pairs whose weights
/// cannot be computed (text responses) are left unweighted and their
/// indices returned so WPO training can refuse them.
pub fn attach_weights(pairs: &[PreferencePair], policy: &TabularLM) -> Result<(Vec<PreferencePair>, Vec<usize>)> {
    let mut out = Vec::with_capacity(pairs.len());
    let mut unweighted = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        let mut pair = pair.clone();
        match pair.prompt.tokens() {
            Some(prompt) if !pair.chosen.is_text() && !pair.rejected.is_text() => {
                pair.chosen_weight = Some(consistency_weight(policy, prompt, &pair.chosen.tokens)?.value);
                pair.rejected_weight = Some(consistency_weight(policy, prompt, &pair.rejected.tokens)?.value);
            }
            _ => {
                pair.chosen_weight = None;
                pair.rejected_weight = None;
                unweighted.push(i);
            }
        }
        out.push(pair);
    }
    Ok((out, unweighted))
}

/// Fills the per-response weights of a sample set.
pub fn weigh_sample_set(set: &SampleSet, policy: &TabularLM) -> Result<SampleSet> {
    let prompt = set
        .prompt
        .tokens()
        .ok_or_else(|| crate::Error::WeightUnavailable("text prompt".into()))?;
    let weights = set
        .responses
        .iter()
        .map(|r| {
            if r.is_text() {
                Err(crate::Error::WeightUnavailable("text response".into()))
            } else {
                consistency_weight(policy, prompt, &r.tokens).map(|w| w.value)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = set.clone();
    out.weights = Some(weights);
    Ok(out)
}
