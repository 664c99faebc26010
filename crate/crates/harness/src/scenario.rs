//! Desk-scale scenario: a sharp gold model that doubles as the strong
//! external sampler and the reward oracle, plus a perturbed policy.
//!
//! Seed derivation, starting from `ExperimentSpec::seed` and the seed
//! index `k`:
//!
//! ```text
//! run      = mix(seed, k)
//! ├─ scenario  = mix(run, 0)
//! │   ├─ gold logits    = mix(scenario, 0)
//! │   ├─ perturbation   = mix(scenario, 1)
//! │   └─ prompts        = mix(scenario, 2)
//! ├─ sampling  = mix(run, 1)
//! │   ├─ policy draws for instruction i   = mix(mix(sampling, 0), i)
//! │   └─ external draws for instruction i = mix(mix(sampling, 1), i)
//! ├─ shuffling = mix(run, 2)
//! └─ monte carlo = mix(run, 3)
//! ```
//!
//! Sampling seeds do not depend on the strategy, so arms and grid points
//! of one run share their random numbers.

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use inco_core::objectives::ObjectiveConfig;
use inco_core::policy::mix_seed;
use inco_core::reward::GoldReward;
use inco_core::{Instruction, Prompt, TabularLM, TokenId, Vocabulary};

use crate::error::{input, Result};
use crate::eval::EvalConfig;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub vocab_size: usize,
    pub order: usize,
    /// Standard deviation of the gold logits; larger is lower entropy.
    pub gold_scale: f64,
    /// Added to the gold eos logit of every row; sets typical length.
    pub eos_bias: f64,
    pub noise_scale: f64,
    pub smoothing: f64,
    pub num_instructions: usize,
    pub prompt_len: usize,
    pub max_tokens: usize,
    pub length_bonus: f64,
    pub target_len: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            order: 2,
            gold_scale: 3.0,
            eos_bias: -2.0,
            noise_scale: 1.5,
            smoothing: 0.5,
            num_instructions: 200,
            prompt_len: 4,
            max_tokens: 32,
            length_bonus: 0.0,
            target_len: 32,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return input("vocab_size must leave room for content tokens");
        }
        if self.num_instructions == 0 || self.prompt_len == 0 || self.max_tokens == 0 || self.target_len == 0 {
            return input("instruction count, prompt length, max tokens and target length must be positive");
        }
        if !(self.gold_scale > 0.0) || !(self.noise_scale >= 0.0) || !(0.0..1.0).contains(&self.smoothing) {
            return input("gold_scale > 0, noise_scale >= 0 and smoothing in [0, 1) required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub num_seeds: usize,
    pub scenario: ScenarioSpec,
    pub num_samples: usize,
    pub on_policy_temperature: f64,
    pub continuation_temperature: f64,
    pub external_temperature: f64,
    /// Prefix length of the continuation arm outside prefix sweeps.
    pub prefix_len: usize,
    pub objective: ObjectiveConfig,
    pub eval: EvalConfig,
    pub prefix_grid: Vec<usize>,
    pub temperature_grid: Vec<f64>,
    pub num_samples_grid: Vec<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_seeds: 10,
            scenario: ScenarioSpec::default(),
            num_samples: inco_core::synthesis::DEFAULT_NUM_SAMPLES,
            on_policy_temperature: inco_core::synthesis::ON_POLICY_TEMPERATURE,
            continuation_temperature: inco_core::synthesis::CONTINUATION_TEMPERATURE,
            external_temperature: inco_core::synthesis::ON_POLICY_TEMPERATURE,
            prefix_len: 4,
            objective: desk_objective(),
            eval: EvalConfig::default(),
            prefix_grid: vec![0, 2, 4, 8, 16, 32],
            temperature_grid: vec![0.5, 0.6, 0.7, 0.8],
            num_samples_grid: vec![1, 2, 3, 4, 5, 6, 7, 8],
            output_dir: None,
        }
    }
}

/// DPO settings that move the tabular policy a sizeable fraction of the
/// way toward gold within ten passes over 200 pairs.
pub fn desk_objective() -> ObjectiveConfig {
    ObjectiveConfig {
        beta: 0.1,
        learning_rate: 0.1,
        batch_size: 32,
        epochs: 10,
        ..ObjectiveConfig::default()
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.num_seeds == 0 || self.num_samples == 0 {
            return input("num_seeds and num_samples must be positive");
        }
        if self.prefix_len > self.scenario.max_tokens {
            return input("prefix_len exceeds max_tokens");
        }
        self.objective.validate()?;
        Ok(())
    }

    pub fn run_seed(&self, k: usize) -> u64 {
        mix_seed(self.seed, k as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    pub run: u64,
}

impl SeedTree {
    pub fn new(run: u64) -> Self {
        Self { run }
    }

    fn scenario(&self) -> u64 {
        mix_seed(self.run, 0)
    }

    pub fn gold(&self) -> u64 {
        mix_seed(self.scenario(), 0)
    }

    pub fn perturbation(&self) -> u64 {
        mix_seed(self.scenario(), 1)
    }

    pub fn prompts(&self) -> u64 {
        mix_seed(self.scenario(), 2)
    }

    pub fn policy_draw(&self, instruction: usize) -> u64 {
        mix_seed(mix_seed(mix_seed(self.run, 1), 0), instruction as u64)
    }

    pub fn external_draw(&self, instruction: usize) -> u64 {
        mix_seed(mix_seed(mix_seed(self.run, 1), 1), instruction as u64)
    }

    pub fn shuffling(&self) -> u64 {
        mix_seed(self.run, 2)
    }

    pub fn monte_carlo(&self) -> u64 {
        mix_seed(self.run, 3)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seeds: SeedTree,
    pub gold: TabularLM,
    pub policy: TabularLM,
    pub reward: GoldReward,
    pub instructions: Vec<Instruction>,
}

impl Scenario {
    pub fn build(spec: &ScenarioSpec, seeds: SeedTree) -> Result<Self> {
        spec.validate()?;
        let vocab = Vocabulary::new(spec.vocab_size, BOS, EOS)?;
        let raw = TabularLM::random(spec.order, vocab.clone(), spec.gold_scale, seeds.gold())?;
        let mut logits = raw.logits().to_vec();
        for row in logits.chunks_mut(spec.vocab_size) {
            row[EOS as usize] += spec.eos_bias;
        }
        let gold = raw.with_logits(logits)?;
        Self::from_gold(spec, seeds, gold)
    }

    /// Scenario around a given gold model; the policy is its perturbation.
    pub fn from_gold(spec: &ScenarioSpec, seeds: SeedTree, gold: TabularLM) -> Result<Self> {
        let policy = gold.perturb(spec.noise_scale, spec.smoothing, seeds.perturbation())?;
        let reward = GoldReward::new(gold.clone(), spec.length_bonus, spec.target_len)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seeds.prompts());
        let v = gold.vocab().size as TokenId;
        let instructions = (0..spec.num_instructions)
            .map(|i| {
                let prompt: Vec<TokenId> = (0..spec.prompt_len).map(|_| rng.random_range(2..v)).collect();
                Instruction::new(format!("q{i:04}"), Prompt::Tokens(prompt))
            })
            .collect::<inco_core::Result<Vec<_>>>()?;
        Ok(Self {
            seeds,
            gold,
            policy,
            reward,
            instructions,
        })
    }

    /// Same instructions and seeds with a different policy.
    pub fn with_policy(&self, policy: TabularLM) -> Self {
        Self {
            policy,
            ..self.clone()
        }
    }
}
