//! Data-construction strategies: on-policy, off-policy, prefix
//! continuation and rewriting. Each produces a [`SampleSet`] of `N`
//! responses for one instruction.
//!
//! Sample `i` uses seed `cfg.seed + i` for every model it draws from, so a
//! plan with fixed seeds reproduces the same sample set exactly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::policy::TabularLM;
use crate::types::{Instruction, SampleSet, SamplingConfig, Segment, Source, Strategy, TokenId};

pub const DEFAULT_NUM_SAMPLES: usize = 5;
pub const ON_POLICY_TEMPERATURE: f64 = 0.8;
pub const CONTINUATION_TEMPERATURE: f64 = 0.6;

/// Rewrite prompt asking the policy to answer in its own words after
/// reading a reference answer. The question appears twice.
pub const REWRITE_TEMPLATE: &str = include_str!("../assets/rewrite_template.txt");
pub const REWRITE_TEMPLATE_ID: &str = "reflect-and-rewrite";
pub const QUESTION_PLACEHOLDER: &str = "<QUESTION_HERE>";
pub const REFERENCE_PLACEHOLDER: &str = "<REFERENCE_ANSWER_HERE>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub strategy: Strategy,
    pub num_samples: usize,
    pub policy_cfg: SamplingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_cfg: Option<SamplingConfig>,
    #[serde(default)]
    pub prefix_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite_template_id: Option<String>,
    /// Reuse one external prefix for all samples instead of drawing one each.
    #[serde(default)]
    pub shared_prefix: bool,
}

impl SamplingPlan {
    /// Plan with the strategy's default policy temperature.
    pub fn new(strategy: Strategy, max_tokens: usize, seed: u64) -> Self {
        let temperature = match strategy {
            Strategy::Continuation => CONTINUATION_TEMPERATURE,
            _ => ON_POLICY_TEMPERATURE,
        };
        let external_cfg = match strategy {
            Strategy::OnPolicy => None,
            _ => Some(SamplingConfig::new(ON_POLICY_TEMPERATURE, max_tokens, seed)),
        };
        Self {
            strategy,
            num_samples: DEFAULT_NUM_SAMPLES,
            policy_cfg: SamplingConfig::new(temperature, max_tokens, seed),
            external_cfg,
            prefix_len: 0,
            rewrite_template_id: (strategy == Strategy::Rewriting).then(|| REWRITE_TEMPLATE_ID.to_string()),
            shared_prefix: false,
        }
    }

    pub fn on_policy(max_tokens: usize, seed: u64) -> Self {
        Self::new(Strategy::OnPolicy, max_tokens, seed)
    }

    pub fn off_policy(max_tokens: usize, seed: u64) -> Self {
        Self::new(Strategy::OffPolicy, max_tokens, seed)
    }

    pub fn continuation(prefix_len: usize, max_tokens: usize, seed: u64) -> Self {
        Self {
            prefix_len,
            ..Self::new(Strategy::Continuation, max_tokens, seed)
        }
    }

    pub fn rewriting(max_tokens: usize, seed: u64) -> Self {
        Self::new(Strategy::Rewriting, max_tokens, seed)
    }

    pub fn with_num_samples(mut self, n: usize) -> Self {
        self.num_samples = n;
        self
    }

    pub fn with_policy_temperature(mut self, t: f64) -> Self {
        self.policy_cfg.temperature = t;
        self
    }

    pub fn with_external_temperature(mut self, t: f64) -> Self {
        if let Some(cfg) = &mut self.external_cfg {
            cfg.temperature = t;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return invalid("num_samples must be positive");
        }
        self.policy_cfg.validate()?;
        if let Some(cfg) = &self.external_cfg {
            cfg.validate()?;
        }
        let needs_external = self.strategy != Strategy::OnPolicy;
        if needs_external && self.external_cfg.is_none() {
            return invalid(format!("{} plans need an external sampling config", self.strategy));
        }
        match self.strategy {
            Strategy::Continuation => {
                if self.prefix_len == 0 {
                    return invalid("continuation needs prefix_len >= 1");
                }
                if self.prefix_len > self.policy_cfg.max_tokens {
                    return invalid("prefix_len exceeds max_tokens");
                }
            }
            Strategy::Rewriting if self.rewrite_template_id.is_none() => {
                return invalid("rewriting needs a template");
            }
            _ => {}
        }
        Ok(())
    }

    fn expect(&self, strategy: Strategy) -> Result<()> {
        if self.strategy != strategy {
            return invalid(format!("plan strategy is {}, expected {strategy}", self.strategy));
        }
        self.validate()
    }

    fn external(&self) -> &SamplingConfig {
        self.external_cfg.as_ref().unwrap_or(&self.policy_cfg)
    }

    fn policy_cfg_for(&self, i: usize) -> SamplingConfig {
        self.policy_cfg.with_seed(self.policy_cfg.seed.wrapping_add(i as u64))
    }

    fn external_cfg_for(&self, i: usize) -> SamplingConfig {
        let ext = self.external();
        ext.with_seed(ext.seed.wrapping_add(i as u64))
    }
}

pub fn synth_on_policy(policy: &TabularLM, instr: &Instruction, plan: &SamplingPlan) -> Result<SampleSet> {
    plan.expect(Strategy::OnPolicy)?;
    let prompt = instr.prompt_tokens()?;
    let responses = (0..plan.num_samples)
        .map(|i| policy.sample(prompt, &plan.policy_cfg_for(i)).map_err(Error::at(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet::new(instr, responses))
}

/// Samples drawn wholly from the external model. Stored logprobs are the
/// external model's own.
pub fn synth_off_policy(external: &TabularLM, instr: &Instruction, plan: &SamplingPlan) -> Result<SampleSet> {
    plan.expect(Strategy::OffPolicy)?;
    let prompt = instr.prompt_tokens()?;
    let responses = (0..plan.num_samples)
        .map(|i| {
            let mut r = external.sample(prompt, &plan.external_cfg_for(i)).map_err(Error::at(i))?;
            r.strategy = Strategy::OffPolicy;
            r.segments = vec![Segment::new(Source::External, 0, r.tokens.len())];
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet::new(instr, responses))
}

/// Up to `prefix_len` external tokens, cut before any eos.
fn external_prefix(external: &TabularLM, prompt: &[TokenId], cfg: &SamplingConfig, prefix_len: usize) -> Result<Vec<TokenId>> {
    let draw_cfg = SamplingConfig {
        max_tokens: prefix_len,
        prefix_len: 0,
        ..cfg.clone()
    };
    let mut tokens = external.sample(prompt, &draw_cfg)?.tokens;
    if let Some(pos) = tokens.iter().position(|&t| t == external.vocab().eos_id) {
        tokens.truncate(pos);
    }
    Ok(tokens)
}

/// Prefix continuation: the first `prefix_len` tokens come from the
/// external model, the policy completes them until eos.
pub fn synth_continuation(
    external: &TabularLM,
    policy: &TabularLM,
    instr: &Instruction,
    plan: &SamplingPlan,
) -> Result<SampleSet> {
    plan.expect(Strategy::Continuation)?;
    if external.vocab().size != policy.vocab().size {
        return invalid("external and policy vocabularies differ");
    }
    let prompt = instr.prompt_tokens()?;
    let shared = if plan.shared_prefix {
        Some(external_prefix(external, prompt, plan.external(), plan.prefix_len)?)
    } else {
        None
    };

    let mut diagnostics = Vec::new();
    let mut responses = Vec::with_capacity(plan.num_samples);
    for i in 0..plan.num_samples {
        let prefix = match &shared {
            Some(p) => p.clone(),
            None => external_prefix(external, prompt, &plan.external_cfg_for(i), plan.prefix_len).map_err(Error::at(i))?,
        };
        if prefix.len() < plan.prefix_len {
            diagnostics.push(format!(
                "sample {i}: external model stopped after {} of {} prefix tokens",
                prefix.len(),
                plan.prefix_len
            ));
        }
        let cfg = plan.policy_cfg_for(i).with_prefix_len(prefix.len());
        let response = policy.continue_from(prompt, &prefix, &cfg).map_err(Error::at(i))?;
        responses.push(response);
    }
    let mut set = SampleSet::new(instr, responses);
    set.diagnostics = diagnostics;
    Ok(set)
}

/// Fills the rewrite template. The question is substituted at every
/// occurrence, the reference once; everything else is copied verbatim.
pub fn render_rewrite_prompt(template: &str, question: &str, reference: &str) -> Result<String> {
    if question.is_empty() {
        return Err(Error::Template("empty question".into()));
    }
    if reference.is_empty() {
        return Err(Error::Template("empty reference answer".into()));
    }
    if !template.contains(QUESTION_PLACEHOLDER) {
        return Err(Error::Template(format!("missing {QUESTION_PLACEHOLDER}")));
    }
    if template.matches(REFERENCE_PLACEHOLDER).count() != 1 {
        return Err(Error::Template(format!("expected exactly one {REFERENCE_PLACEHOLDER}")));
    }

    // single pass, so placeholder text inside the substitutions stays literal
    let mut out = String::with_capacity(template.len() + 2 * question.len() + reference.len());
    let mut rest = template;
    loop {
        let q = rest.find(QUESTION_PLACEHOLDER);
        let r = rest.find(REFERENCE_PLACEHOLDER);
        let (at, placeholder, value) = match (q, r) {
            (Some(q), Some(r)) if r < q => (r, REFERENCE_PLACEHOLDER, reference),
            (Some(q), _) => (q, QUESTION_PLACEHOLDER, question),
            (None, Some(r)) => (r, REFERENCE_PLACEHOLDER, reference),
            (None, None) => break,
        };
        out.push_str(&rest[..at]);
        out.push_str(value);
        rest = &rest[at + placeholder.len()..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Rewriting on the tabular stack: the policy is conditioned on
/// `prompt ‖ reference` (reference eos dropped) and its own samples are
/// kept. Stored logprobs are re-scored against the instruction prompt.
pub fn synth_rewriting(
    external: &TabularLM,
    policy: &TabularLM,
    instr: &Instruction,
    plan: &SamplingPlan,
) -> Result<SampleSet> {
    plan.expect(Strategy::Rewriting)?;
    let prompt = instr.prompt_tokens()?;
    let mut reference = external.sample(prompt, plan.external())?;
    reference.strategy = Strategy::OffPolicy;
    reference.segments = vec![Segment::new(Source::External, 0, reference.tokens.len())];

    let mut conditioned = prompt.to_vec();
    let body = match reference.tokens.split_last() {
        Some((&last, body)) if last == external.vocab().eos_id => body,
        _ => &reference.tokens[..],
    };
    conditioned.extend_from_slice(body);

    let mut responses = Vec::with_capacity(plan.num_samples);
    for i in 0..plan.num_samples {
        let mut r = policy.sample(&conditioned, &plan.policy_cfg_for(i)).map_err(Error::at(i))?;
        let (_, per_token) = policy.sequence_logprob(prompt, &r.tokens)?;
        r.per_token_logprob = Some(per_token);
        r.strategy = Strategy::Rewriting;
        responses.push(r);
    }
    let mut set = SampleSet::new(instr, responses);
    set.reference = Some(reference);
    Ok(set)
}

/// Dispatches on `plan.strategy`. `external` is required for every
/// strategy except on-policy.
pub fn synthesize(
    policy: &TabularLM,
    external: Option<&TabularLM>,
    instr: &Instruction,
    plan: &SamplingPlan,
) -> Result<SampleSet> {
    let need = || Error::InvalidInput(format!("{} needs an external model", plan.strategy));
    match plan.strategy {
        Strategy::OnPolicy => synth_on_policy(policy, instr, plan),
        Strategy::OffPolicy => synth_off_policy(external.ok_or_else(need)?, instr, plan),
        Strategy::Continuation => synth_continuation(external.ok_or_else(need)?, policy, instr, plan),
        Strategy::Rewriting => synth_rewriting(external.ok_or_else(need)?, policy, instr, plan),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{validate_response, Prompt, Vocabulary};

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::new(n, 0, 1).unwrap()
    }

    fn instr() -> Instruction {
        Instruction::new("q0", Prompt::Tokens(vec![2, 3])).unwrap()
    }

    /// Order-1 model following `next[row]` with certainty.
    fn deterministic(next: &[(usize, usize)], n: usize) -> TabularLM {
        let mut logits = vec![0.0; n * n];
        for row in 0..n {
            logits[row * n + 1] = 60.0;
        }
        for &(row, to) in next {
            logits[row * n + 1] = 0.0;
            logits[row * n + to] = 60.0;
        }
        TabularLM::new(1, vocab(n), logits).unwrap()
    }

    #[test]
    fn plan_defaults() {
        let on = SamplingPlan::on_policy(32, 0);
        assert_eq!(on.num_samples, 5);
        assert_eq!(on.policy_cfg.temperature, 0.8);
        let cont = SamplingPlan::continuation(4, 32, 0);
        assert_eq!(cont.policy_cfg.temperature, 0.6);
        assert!(cont.validate().is_ok());
        assert!(SamplingPlan::continuation(0, 32, 0).validate().is_err());
        let mut rw = SamplingPlan::rewriting(32, 0);
        assert!(rw.validate().is_ok());
        rw.rewrite_template_id = None;
        assert!(rw.validate().is_err());
        assert!(SamplingPlan::on_policy(32, 0).with_num_samples(0).validate().is_err());
    }

    #[test]
    fn on_policy_matches_direct_calls() {
        let lm = TabularLM::random(2, vocab(6), 2.0, 3).unwrap();
        let plan = SamplingPlan::on_policy(16, 40);
        let set = synth_on_policy(&lm, &instr(), &plan).unwrap();
        for (i, r) in set.responses.iter().enumerate() {
            let direct = lm.sample(&[2, 3], &plan.policy_cfg.with_seed(40 + i as u64)).unwrap();
            assert_eq!(r, &direct);
            assert!(validate_response(r, lm.vocab()).is_empty());
        }
        let one = synth_on_policy(&lm, &instr(), &plan.clone().with_num_samples(1)).unwrap();
        assert_eq!(one.responses, vec![lm.sample(&[2, 3], &plan.policy_cfg).unwrap()]);
        assert!(synth_on_policy(&lm, &instr(), &SamplingPlan::off_policy(16, 0)).is_err());
    }

    #[test]
    fn deterministic_policy_gives_identical_samples() {
        let lm = deterministic(&[(3, 4), (4, 5)], 7);
        let set = synth_on_policy(&lm, &instr(), &SamplingPlan::on_policy(16, 0)).unwrap();
        assert!(set.responses.iter().all(|r| r.tokens == vec![4, 5, 1]));
    }

    #[test]
    fn deterministic_continuation() {
        // external: 3 -> 5 -> 6 -> 4 -> eos; policy: 4 -> 2 -> eos elsewhere
        let external = deterministic(&[(3, 5), (5, 6), (6, 4), (4, 1)], 8);
        let policy = deterministic(&[(3, 4), (4, 2), (6, 2), (2, 1)], 8);
        let plan = SamplingPlan::continuation(2, 16, 1);
        let set = synth_continuation(&external, &policy, &instr(), &plan).unwrap();
        for r in &set.responses {
            assert_eq!(r.tokens, vec![5, 6, 2, 1]);
            assert_eq!(r.external_prefix_len(), 2);
            assert!(validate_response(r, policy.vocab()).is_empty());
        }
        assert!(set.diagnostics.is_empty());
    }

    #[test]
    fn short_external_output_is_flagged() {
        let external = deterministic(&[(3, 5), (5, 1)], 8);
        let policy = deterministic(&[(5, 2), (2, 1)], 8);
        let plan = SamplingPlan::continuation(4, 16, 1).with_num_samples(2);
        let set = synth_continuation(&external, &policy, &instr(), &plan).unwrap();
        assert_eq!(set.responses[0].tokens, vec![5, 2, 1]);
        assert_eq!(set.responses[0].external_prefix_len(), 1);
        assert_eq!(set.diagnostics.len(), 2);
    }

    #[test]
    fn continuation_prefix_is_the_external_draw() {
        let external = TabularLM::random(2, vocab(8), 3.0, 1).unwrap();
        let policy = external.perturb(1.0, 0.3, 2).unwrap();
        let plan = SamplingPlan::continuation(4, 24, 77);
        let set = synth_continuation(&external, &policy, &instr(), &plan).unwrap();
        for (i, r) in set.responses.iter().enumerate() {
            let draw = external.sample(&[2, 3], &plan.external_cfg.as_ref().unwrap().with_seed(77 + i as u64)).unwrap();
            let k = r.external_prefix_len();
            assert_eq!(&r.tokens[..k], &draw.tokens[..k]);
            assert!(validate_response(r, policy.vocab()).is_empty());
        }
        assert_eq!(set, synth_continuation(&external, &policy, &instr(), &plan).unwrap());
    }

    #[test]
    fn shared_prefix_mode() {
        let external = TabularLM::random(2, vocab(8), 1.0, 1).unwrap();
        let policy = external.perturb(1.0, 0.3, 2).unwrap();
        let mut plan = SamplingPlan::continuation(3, 24, 5);
        plan.shared_prefix = true;
        let set = synth_continuation(&external, &policy, &instr(), &plan).unwrap();
        let first = &set.responses[0];
        let k = first.external_prefix_len();
        for r in &set.responses {
            assert_eq!(&r.tokens[..k], &first.tokens[..k]);
        }
    }

    #[test]
    fn off_policy_is_external_greedy() {
        let external = deterministic(&[(3, 6), (6, 1)], 8);
        let plan = SamplingPlan::off_policy(16, 0).with_num_samples(1);
        let set = synth_off_policy(&external, &instr(), &plan).unwrap();
        assert_eq!(set.responses[0].tokens, vec![6, 1]);
        assert_eq!(set.responses[0].segments, vec![Segment::new(Source::External, 0, 2)]);
        assert!(validate_response(&set.responses[0], external.vocab()).is_empty());
    }

    #[test]
    fn rewriting_with_deterministic_policy() {
        let external = deterministic(&[(3, 6), (6, 1)], 8);
        let policy = deterministic(&[(6, 5), (5, 1)], 8);
        let set = synth_rewriting(&external, &policy, &instr(), &SamplingPlan::rewriting(16, 0)).unwrap();
        assert_eq!(set.reference.as_ref().unwrap().tokens, vec![6, 1]);
        for r in &set.responses {
            assert_eq!(r.tokens, vec![5, 1]);
            assert_eq!(r.strategy, Strategy::Rewriting);
            assert!(validate_response(r, policy.vocab()).is_empty());
            let (_, per) = policy.sequence_logprob(&[2, 3], &r.tokens).unwrap();
            assert_eq!(r.per_token_logprob.as_ref().unwrap(), &per);
        }
    }

    #[test]
    fn rewrite_prompt_counts() {
        let out = render_rewrite_prompt(REWRITE_TEMPLATE, "Q", "R").unwrap();
        assert_eq!(out.matches("<start_of_question>").count(), 2);
        assert!(!out.contains(QUESTION_PLACEHOLDER));
        let q = "Which planet is largest?";
        let r = "Jupiter is the largest.";
        let out = render_rewrite_prompt(REWRITE_TEMPLATE, q, r).unwrap();
        assert_eq!(out.matches(q).count(), 2);
        assert_eq!(out.matches(r).count(), 1);
        assert!(render_rewrite_prompt(REWRITE_TEMPLATE, "Q", "").is_err());
        assert!(render_rewrite_prompt("no placeholders", "Q", "R").is_err());
        assert!(render_rewrite_prompt("<QUESTION_HERE> only", "Q", "R").is_err());
    }

    #[test]
    fn placeholders_inside_values_stay_literal() {
        let out = render_rewrite_prompt("a <QUESTION_HERE> b <REFERENCE_ANSWER_HERE> c <QUESTION_HERE>", "<REFERENCE_ANSWER_HERE>", "<QUESTION_HERE>").unwrap();
        assert_eq!(out, "a <REFERENCE_ANSWER_HERE> b <QUESTION_HERE> c <REFERENCE_ANSWER_HERE>");
    }

    #[test]
    fn dispatch_requires_external() {
        let lm = TabularLM::random(1, vocab(4), 1.0, 0).unwrap();
        assert!(synthesize(&lm, None, &instr(), &SamplingPlan::off_policy(8, 0)).is_err());
        assert!(synthesize(&lm, None, &instr(), &SamplingPlan::on_policy(8, 0)).is_ok());
    }
}
