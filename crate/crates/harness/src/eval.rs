//! Expected gold reward of a policy's samples, computed exactly or by
//! Monte Carlo.

use serde::{Deserialize, Serialize};

use inco_core::policy::{log_softmax, mix_seed, softmax};
use inco_core::reward::GoldReward;
use inco_core::{Instruction, SamplingConfig, TabularLM, TokenId};

use crate::error::{input, Result};
use crate::stats;

/// Largest sequence space walked by brute-force enumeration.
pub const ENUMERATION_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    /// Enumeration when the space is small, otherwise the exact recursion
    /// when policy and gold share a context layout, otherwise Monte Carlo.
    Auto,
    Enumerate,
    /// Forward recursion over context rows; exact, linear in length.
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub temperature: f64,
    pub max_tokens: usize,
    pub method: EvalMethod,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_tokens: 32,
            method: EvalMethod::Auto,
            mc_samples: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    /// Zero for exact methods.
    pub std_err: f64,
    pub method: EvalMethod,
}

/// Mean gold reward of responses sampled from `policy` at the evaluation
/// temperature, averaged uniformly over instructions.
pub fn expected_reward(policy: &TabularLM, rm: &GoldReward, instructions: &[Instruction], cfg: &EvalConfig) -> Result<f64> {
    Ok(evaluate(policy, rm, instructions, cfg)?.mean)
}

pub fn evaluate(policy: &TabularLM, rm: &GoldReward, instructions: &[Instruction], cfg: &EvalConfig) -> Result<EvalStats> {
    if instructions.is_empty() {
        return input("evaluation needs at least one instruction");
    }
    SamplingConfig::new(cfg.temperature, cfg.max_tokens, 0).validate()?;
    if policy.vocab() != rm.gold().vocab() {
        return input("policy and gold vocabularies differ");
    }
    let prompts = instructions
        .iter()
        .map(|i| i.prompt_tokens().map(<[TokenId]>::to_vec))
        .collect::<inco_core::Result<Vec<_>>>()?;
    let same_layout = policy.order() == rm.gold().order();
    let space = (policy.vocab().size as f64).powi(cfg.max_tokens as i32);
    let method = match cfg.method {
        EvalMethod::Auto if space <= ENUMERATION_LIMIT => EvalMethod::Enumerate,
        EvalMethod::Auto if same_layout => EvalMethod::Exact,
        EvalMethod::Auto => EvalMethod::MonteCarlo,
        m => m,
    };
    match method {
        EvalMethod::Enumerate => {
            if space > ENUMERATION_LIMIT {
                return input(format!("sequence space {space:e} too large to enumerate"));
            }
            let per: Vec<f64> = prompts.iter().map(|p| enumerate(policy, rm, p, cfg)).collect::<Result<_>>()?;
            Ok(EvalStats { mean: stats::mean(&per), std_err: 0.0, method })
        }
        EvalMethod::Exact => {
            if !same_layout {
                return input("exact evaluation needs policy and gold of equal order");
            }
            Ok(EvalStats { mean: exact(policy, rm, &prompts, cfg)?, std_err: 0.0, method })
        }
        _ => monte_carlo(policy, rm, &prompts, cfg),
    }
}

fn enumerate(policy: &TabularLM, rm: &GoldReward, prompt: &[TokenId], cfg: &EvalConfig) -> Result<f64> {
    let eos = policy.vocab().eos_id;
    let v = policy.vocab().size;
    let mut total = 0.0;
    let mut seq: Vec<TokenId> = Vec::with_capacity(cfg.max_tokens);
    // Depth-first walk carrying (policy row, gold row, probability, gold logprob).
    fn walk(
        policy: &TabularLM,
        rm: &GoldReward,
        cfg: &EvalConfig,
        (prow, grow, prob, glp): (usize, usize, f64, f64),
        seq: &mut Vec<TokenId>,
        total: &mut f64,
        eos: TokenId,
        v: usize,
    ) {
        let probs = softmax(policy.row(prow), cfg.temperature);
        let gold_lp = log_softmax(rm.gold().row(grow));
        for t in 0..v {
            let p = prob * probs[t];
            if p == 0.0 {
                continue;
            }
            let lp = glp + gold_lp[t];
            seq.push(t as TokenId);
            if t as TokenId == eos || seq.len() == cfg.max_tokens {
                *total += p * rm.value_from_logprob(lp, seq.len());
            } else {
                let next = (policy.advance(prow, t as TokenId), rm.gold().advance(grow, t as TokenId), p, lp);
                walk(policy, rm, cfg, next, seq, total, eos, v);
            }
            seq.pop();
        }
    }
    let start = (policy.row_index(prompt)?, rm.gold().row_index(prompt)?, 1.0, 0.0);
    walk(policy, rm, cfg, start, &mut seq, &mut total, eos, v);
    Ok(total)
}

/// Propagates, per context row, the probability of not having stopped and
/// the probability-weighted running gold log-probability. Every stopping
/// event at length `l` contributes its mass-weighted reward directly, which
/// works because the reward is linear in the summed log-probability for a
/// fixed length. Instructions enter as a uniform mixture of start rows.
fn exact(policy: &TabularLM, rm: &GoldReward, prompts: &[Vec<TokenId>], cfg: &EvalConfig) -> Result<f64> {
    let rows = policy.num_rows();
    let v = policy.vocab().size;
    let eos = policy.vocab().eos_id as usize;
    let probs: Vec<Vec<f64>> = (0..rows).map(|r| softmax(policy.row(r), cfg.temperature)).collect();
    let gold_lp: Vec<Vec<f64>> = (0..rows).map(|r| log_softmax(rm.gold().row(r))).collect();
    let mut mass = vec![0.0; rows];
    let mut acc = vec![0.0; rows];
    for p in prompts {
        mass[policy.row_index(p)?] += 1.0 / prompts.len() as f64;
    }
    let mut total = 0.0;
    for step in 1..=cfg.max_tokens {
        let mut next_mass = vec![0.0; rows];
        let mut next_acc = vec![0.0; rows];
        let mut stop_mass = 0.0;
        let mut stop_acc = 0.0;
        for r in 0..rows {
            if mass[r] == 0.0 {
                continue;
            }
            for t in 0..v {
                let m = mass[r] * probs[r][t];
                let a = acc[r] * probs[r][t] + m * gold_lp[r][t];
                if t == eos || step == cfg.max_tokens {
                    stop_mass += m;
                    stop_acc += a;
                } else {
                    let nr = policy.advance(r, t as TokenId);
                    next_mass[nr] += m;
                    next_acc[nr] += a;
                }
            }
        }
        total += stop_acc / step as f64 + stop_mass * rm.length_bonus * step.min(rm.target_len) as f64;
        mass = next_mass;
        acc = next_acc;
    }
    Ok(total)
}

fn monte_carlo(policy: &TabularLM, rm: &GoldReward, prompts: &[Vec<TokenId>], cfg: &EvalConfig) -> Result<EvalStats> {
    if cfg.mc_samples == 0 {
        return input("mc_samples must be positive");
    }
    let mut values = Vec::with_capacity(prompts.len() * cfg.mc_samples);
    for (i, p) in prompts.iter().enumerate() {
        let base = mix_seed(cfg.seed, i as u64);
        for s in 0..cfg.mc_samples {
            let sc = SamplingConfig::new(cfg.temperature, cfg.max_tokens, mix_seed(base, s as u64));
            let r = policy.sample(p, &sc)?;
            values.push(rm.score_tokens(p, &r.tokens)?.value);
        }
    }
    Ok(EvalStats {
        mean: stats::mean(&values),
        std_err: stats::std_err(&values),
        method: EvalMethod::MonteCarlo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use inco_core::{Prompt, Vocabulary};

    fn instr(prompts: &[&[TokenId]]) -> Vec<Instruction> {
        prompts
            .iter()
            .enumerate()
            .map(|(i, p)| Instruction::new(format!("i{i}"), Prompt::Tokens(p.to_vec())).unwrap())
            .collect()
    }

    fn cfg(method: EvalMethod, len: usize) -> EvalConfig {
        EvalConfig {
            max_tokens: len,
            method,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn uniform_policy_and_gold_give_log_inverse_vocab() {
        let vocab = Vocabulary::new(4, 0, 1).unwrap();
        let lm = TabularLM::uniform(1, vocab).unwrap();
        let rm = GoldReward::new(lm.clone(), 0.0, 8).unwrap();
        let ins = instr(&[&[2], &[3, 2]]);
        for m in [EvalMethod::Enumerate, EvalMethod::Exact] {
            let got = expected_reward(&lm, &rm, &ins, &cfg(m, 5)).unwrap();
            assert!((got - (0.25f64).ln()).abs() < 1e-12, "{m:?}: {got}");
        }
    }

    #[test]
    fn exact_matches_enumeration() {
        let vocab = Vocabulary::new(3, 0, 1).unwrap();
        let gold = TabularLM::random(2, vocab, 2.0, 4).unwrap();
        let policy = gold.perturb(1.0, 0.3, 5).unwrap();
        let rm = GoldReward::new(gold, 0.2, 3).unwrap();
        let ins = instr(&[&[2], &[2, 2, 1], &[0]]);
        for t in [0.6, 1.0, 1.4] {
            let c = EvalConfig {
                temperature: t,
                ..cfg(EvalMethod::Enumerate, 6)
            };
            let a = expected_reward(&policy, &rm, &ins, &c).unwrap();
            let b = expected_reward(&policy, &rm, &ins, &EvalConfig { method: EvalMethod::Exact, ..c }).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn auto_picks_by_space_size() {
        let vocab = Vocabulary::new(16, 0, 1).unwrap();
        let lm = TabularLM::random(2, vocab, 1.0, 1).unwrap();
        let rm = GoldReward::new(lm.clone(), 0.0, 8).unwrap();
        let ins = instr(&[&[2]]);
        assert_eq!(evaluate(&lm, &rm, &ins, &cfg(EvalMethod::Auto, 4)).unwrap().method, EvalMethod::Enumerate);
        assert_eq!(evaluate(&lm, &rm, &ins, &cfg(EvalMethod::Auto, 32)).unwrap().method, EvalMethod::Exact);
        assert!(evaluate(&lm, &rm, &ins, &cfg(EvalMethod::Enumerate, 32)).is_err());
        assert!(evaluate(&lm, &rm, &[], &cfg(EvalMethod::Auto, 4)).is_err());
    }
}
