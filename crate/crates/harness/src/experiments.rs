//! Dataset construction, the on/off/continuation comparison, sweeps and
//! the partial-reward correlation study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use inco_core::objectives::{train, ObjectiveConfig};
use inco_core::pairing::{pair_forced_offpolicy, pair_unconstrained, weigh_sample_set, RejectSelection};
use inco_core::synthesis::{synthesize, SamplingPlan};
use inco_core::{PreferencePair, SampleSet, TabularLM};

use crate::error::{input, HarnessError, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::scenario::{ExperimentSpec, Scenario, SeedTree};
use crate::stats::{self, gaussian_smooth};

/// Smoothing width of sweep curves, in grid steps.
pub const CURVE_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Arm {
    OnPolicy,
    OffPolicy,
    Continuation { prefix_len: usize },
    Rewriting,
}

impl Arm {
    pub fn name(&self) -> String {
        match self {
            Arm::OnPolicy => "on_policy".into(),
            Arm::OffPolicy => "off_policy".into(),
            Arm::Continuation { prefix_len } => format!("continuation_p{prefix_len}"),
            Arm::Rewriting => "rewriting".into(),
        }
    }
}

/// One dataset recipe: which arm, at what policy temperature, how many
/// samples per instruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub arm: Arm,
    pub policy_temperature: f64,
    pub num_samples: usize,
}

impl ArmConfig {
    /// Strategy defaults taken from `spec`. A continuation with prefix 0
    /// is plain policy sampling at the continuation temperature.
    pub fn from_spec(spec: &ExperimentSpec, arm: Arm) -> Self {
        let policy_temperature = match arm {
            Arm::Continuation { .. } => spec.continuation_temperature,
            _ => spec.on_policy_temperature,
        };
        Self {
            arm,
            policy_temperature,
            num_samples: spec.num_samples,
        }
    }

    /// Sampling plan for one instruction, seeded from `seeds`.
    pub fn plan(&self, spec: &ExperimentSpec, seeds: &SeedTree, instruction: usize) -> SamplingPlan {
        let max = spec.scenario.max_tokens;
        let plan = match self.arm {
            Arm::OnPolicy | Arm::Continuation { prefix_len: 0 } => SamplingPlan::on_policy(max, 0),
            Arm::OffPolicy => SamplingPlan::off_policy(max, 0),
            Arm::Continuation { prefix_len } => SamplingPlan::continuation(prefix_len, max, 0),
            Arm::Rewriting => SamplingPlan::rewriting(max, 0),
        };
        let mut plan = plan
            .with_num_samples(self.num_samples)
            .with_policy_temperature(self.policy_temperature)
            .with_external_temperature(spec.external_temperature);
        plan.policy_cfg.seed = seeds.policy_draw(instruction);
        if let Some(ext) = &mut plan.external_cfg {
            ext.seed = seeds.external_draw(instruction);
        }
        plan
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_sets: usize,
    pub num_pairs: usize,
    /// Over every sampled response.
    pub mean_reward: f64,
    /// Consistency weight under the untrained policy, over every response.
    pub mean_weight: f64,
    pub mean_margin: f64,
    pub mean_length: f64,
    pub reward_std_err: f64,
    pub weight_std_err: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub arm: ArmConfig,
    pub sets: Vec<SampleSet>,
    pub pairs: Vec<PreferencePair>,
    pub stats: DatasetStats,
}

fn summarize(sets: &[SampleSet], pairs: &[PreferencePair]) -> Result<DatasetStats> {
    let mut rewards = Vec::new();
    let mut weights = Vec::new();
    let mut lengths = Vec::new();
    for set in sets {
        rewards.extend_from_slice(set.rewards()?);
        weights.extend(set.weights.iter().flatten().copied());
        lengths.extend(set.responses.iter().map(|r| r.tokens.len() as f64));
    }
    let margins: Vec<f64> = pairs.iter().map(PreferencePair::margin).collect();
    Ok(DatasetStats {
        num_sets: sets.len(),
        num_pairs: pairs.len(),
        mean_reward: stats::mean(&rewards),
        mean_weight: stats::mean(&weights),
        mean_margin: if margins.is_empty() { 0.0 } else { stats::mean(&margins) },
        mean_length: stats::mean(&lengths),
        reward_std_err: stats::std_err(&rewards),
        weight_std_err: stats::std_err(&weights),
    })
}

/// Synthesizes, scores and weighs one sample set per instruction and pairs
/// each set by best-versus-worst reward.
pub fn build_dataset(scn: &Scenario, spec: &ExperimentSpec, arm: ArmConfig) -> Result<Dataset> {
    let sets = sample_sets(scn, spec, arm)?;
    let pairs = sets
        .iter()
        .map(pair_unconstrained)
        .collect::<inco_core::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let stats = summarize(&sets, &pairs)?;
    Ok(Dataset { arm, sets, pairs, stats })
}

/// Scored and weighed sample sets in instruction order.
pub fn sample_sets(scn: &Scenario, spec: &ExperimentSpec, arm: ArmConfig) -> Result<Vec<SampleSet>> {
    scn.instructions
        .par_iter()
        .enumerate()
        .map(|(i, ins)| {
            let plan = arm.plan(spec, &scn.seeds, i);
            let set = synthesize(&scn.policy, Some(&scn.gold), ins, &plan)?;
            let set = scn.reward.score_sample_set(&set)?;
            Ok(weigh_sample_set(&set, &scn.policy)?)
        })
        .collect::<Result<Vec<_>>>()
}

/// Off-policy best as chosen against an on-policy response as rejected,
/// keeping only instructions where the off-policy reward is higher.
pub fn forced_offpolicy_pairs(on: &[SampleSet], off: &[SampleSet], selection: RejectSelection) -> Result<Vec<PreferencePair>> {
    if on.len() != off.len() {
        return input("on- and off-policy datasets cover different instructions");
    }
    let pairs = on
        .iter()
        .zip(off)
        .map(|(a, b)| pair_forced_offpolicy(a, b, selection))
        .collect::<inco_core::Result<Vec<_>>>()?;
    Ok(pairs.into_iter().flatten().collect())
}

fn objective_for(spec: &ExperimentSpec, seeds: &SeedTree) -> ObjectiveConfig {
    ObjectiveConfig {
        seed: seeds.shuffling(),
        ..spec.objective.clone()
    }
}

/// Evaluation settings of `spec` with the scenario's Monte Carlo seed.
pub fn eval_for(spec: &ExperimentSpec, seeds: &SeedTree) -> EvalConfig {
    EvalConfig {
        seed: seeds.monte_carlo(),
        max_tokens: spec.scenario.max_tokens,
        ..spec.eval.clone()
    }
}

/// Trains a copy of the scenario policy on `pairs` and returns the trained
/// model with its final-step loss.
pub fn train_arm(scn: &Scenario, spec: &ExperimentSpec, pairs: &[PreferencePair]) -> Result<(TabularLM, f64)> {
    if pairs.is_empty() {
        return input("no preference pairs survived pairing");
    }
    let out = train(&scn.policy, &scn.policy, pairs, &objective_for(spec, &scn.seeds))?;
    let loss = out.log.last().map_or(f64::NAN, |e| e.loss);
    Ok((out.model, loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub seed: usize,
    pub dataset: DatasetStats,
    pub expected_reward: f64,
    pub eval_std_err: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedBaseline {
    pub seed: usize,
    pub policy_reward: f64,
    pub gold_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baselines: Vec<SeedBaseline>,
    /// Seed-major, arms in the order they were requested.
    pub arms: Vec<ArmResult>,
}

impl ComparisonReport {
    /// Post-training expected reward of `arm` per seed, in seed order.
    pub fn rewards(&self, arm: &str) -> Vec<f64> {
        self.arms.iter().filter(|a| a.arm == arm).map(|a| a.expected_reward).collect()
    }
}

/// On-policy, off-policy and continuation arms trained under one objective
/// on every seed.
#[allow(non_snake_case)]
pub fn run_experiment_E1(spec: &ExperimentSpec) -> Result<ComparisonReport> {
    let arms = [Arm::OnPolicy, Arm::OffPolicy, Arm::Continuation { prefix_len: spec.prefix_len }];
    run_comparison(spec, &arms)
}

pub fn run_comparison(spec: &ExperimentSpec, arms: &[Arm]) -> Result<ComparisonReport> {
    spec.validate()?;
    if arms.is_empty() {
        return input("no arms requested");
    }
    let per_seed = (0..spec.num_seeds)
        .into_par_iter()
        .map(|k| {
            let scn = Scenario::build(&spec.scenario, SeedTree::new(spec.run_seed(k)))?;
            let eval = eval_for(spec, &scn.seeds);
            let baseline = SeedBaseline {
                seed: k,
                policy_reward: evaluate(&scn.policy, &scn.reward, &scn.instructions, &eval)?.mean,
                gold_reward: evaluate(&scn.gold, &scn.reward, &scn.instructions, &eval)?.mean,
            };
            let results = arms
                .par_iter()
                .map(|&arm| {
                    let data = build_dataset(&scn, spec, ArmConfig::from_spec(spec, arm))?;
                    let (model, final_loss) = train_arm(&scn, spec, &data.pairs)?;
                    let ev = evaluate(&model, &scn.reward, &scn.instructions, &eval)?;
                    Ok(ArmResult {
                        arm: arm.name(),
                        seed: k,
                        dataset: data.stats,
                        expected_reward: ev.mean,
                        eval_std_err: ev.std_err,
                        final_loss,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((baseline, results))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ComparisonReport {
        baselines: Vec::new(),
        arms: Vec::new(),
    };
    for (b, r) in per_seed {
        report.baselines.push(b);
        report.arms.extend(r);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Knob {
    PrefixLen,
    Temperature,
    NumSamples,
}

impl std::str::FromStr for Knob {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "prefix_len" => Ok(Knob::PrefixLen),
            "temperature" => Ok(Knob::Temperature),
            "num_samples" => Ok(Knob::NumSamples),
            other => input(format!("unknown knob {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub knob: f64,
    pub seed: usize,
    pub mean_reward: f64,
    pub mean_weight: f64,
    pub mean_margin: f64,
    /// Absent when the sweep ran without training.
    pub expected_reward: Option<f64>,
    pub eval_std_err: Option<f64>,
    pub num_pairs: usize,
    pub reward_std_err: f64,
    pub weight_std_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub y_smoothed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub knob: Knob,
    /// Grid-major, seeds ascending within a grid point.
    pub records: Vec<SweepRecord>,
    /// Seed-averaged expected reward per grid point, raw and smoothed; the
    /// mean dataset reward when the sweep ran without training.
    pub curve: Vec<CurvePoint>,
}

impl SweepResult {
    pub fn grid(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = Vec::new();
        for r in &self.records {
            if !xs.contains(&r.knob) {
                xs.push(r.knob);
            }
        }
        xs
    }

    /// Records of one grid point.
    pub fn at(&self, x: f64) -> Vec<&SweepRecord> {
        self.records.iter().filter(|r| r.knob == x).collect()
    }

    /// Seed-averaged value of a record field per grid point.
    pub fn averaged(&self, field: impl Fn(&SweepRecord) -> f64) -> Vec<f64> {
        self.grid()
            .iter()
            .map(|&x| stats::mean(&self.at(x).into_iter().map(&field).collect::<Vec<_>>()))
            .collect()
    }
}

/// Sweep options beyond the spec: whether each grid point trains and
/// evaluates a policy, or only reports dataset statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub train: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { train: true }
    }
}

/// One pipeline run per grid point and seed on the continuation arm, with
/// the knob overriding prefix length, policy temperature or sample count.
pub fn run_sweep(spec: &ExperimentSpec, knob: Knob) -> Result<SweepResult> {
    run_sweep_with(spec, knob, SweepOptions::default())
}

pub fn run_sweep_with(spec: &ExperimentSpec, knob: Knob, opts: SweepOptions) -> Result<SweepResult> {
    spec.validate()?;
    let grid: Vec<f64> = match knob {
        Knob::PrefixLen => spec.prefix_grid.iter().map(|&p| p as f64).collect(),
        Knob::Temperature => spec.temperature_grid.clone(),
        Knob::NumSamples => spec.num_samples_grid.iter().map(|&n| n as f64).collect(),
    };
    if grid.is_empty() {
        return input(format!("{knob:?} grid is empty"));
    }
    let scenarios = (0..spec.num_seeds)
        .into_par_iter()
        .map(|k| Scenario::build(&spec.scenario, SeedTree::new(spec.run_seed(k))))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(f64, usize)> = grid.iter().flat_map(|&x| (0..spec.num_seeds).map(move |k| (x, k))).collect();
    let records = jobs
        .par_iter()
        .map(|&(x, k)| {
            let scn = &scenarios[k];
            let mut arm = ArmConfig::from_spec(spec, Arm::Continuation { prefix_len: spec.prefix_len });
            match knob {
                Knob::PrefixLen => arm.arm = Arm::Continuation { prefix_len: x as usize },
                Knob::Temperature => arm.policy_temperature = x,
                Knob::NumSamples => arm.num_samples = x as usize,
            }
            let data = build_dataset(scn, spec, arm)?;
            let (expected_reward, eval_std_err) = if opts.train {
                let (model, _) = train_arm(scn, spec, &data.pairs)?;
                let ev = evaluate(&model, &scn.reward, &scn.instructions, &eval_for(spec, &scn.seeds))?;
                (Some(ev.mean), Some(ev.std_err))
            } else {
                (None, None)
            };
            Ok(SweepRecord {
                knob: x,
                seed: k,
                mean_reward: data.stats.mean_reward,
                mean_weight: data.stats.mean_weight,
                mean_margin: data.stats.mean_margin,
                expected_reward,
                eval_std_err,
                num_pairs: data.stats.num_pairs,
                reward_std_err: data.stats.reward_std_err,
                weight_std_err: data.stats.weight_std_err,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut result = SweepResult {
        knob,
        records,
        curve: Vec::new(),
    };
    let ys = if opts.train {
        result.averaged(|r| r.expected_reward.unwrap_or(f64::NAN))
    } else {
        result.averaged(|r| r.mean_reward)
    };
    let smooth = gaussian_smooth(&ys, CURVE_SIGMA);
    result.curve = grid
        .iter()
        .zip(ys.iter().zip(&smooth))
        .map(|(&x, (&y, &s))| CurvePoint { x, y, y_smoothed: s })
        .collect();
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub length: usize,
    pub full: f64,
    pub partial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub truncate_at: usize,
    pub pearson: f64,
    /// Responses no longer than the cut whose partial reward differs from
    /// the full reward. Always zero for a correct scorer.
    pub identity_violations: usize,
    pub points: Vec<CorrelationPoint>,
}

/// Full versus truncated reward on the given sample sets. `truncate_at`
/// defaults to half the mean response length, rounded.
pub fn correlation_study(scn: &Scenario, sets: &[SampleSet], truncate_at: Option<usize>) -> Result<CorrelationReport> {
    let responses: Vec<(&SampleSet, usize)> = sets.iter().flat_map(|s| (0..s.len()).map(move |i| (s, i))).collect();
    if responses.len() < 2 {
        return input("correlation needs at least two responses");
    }
    let k = match truncate_at {
        Some(k) => k,
        None => {
            let mean_len = stats::mean(&responses.iter().map(|(s, i)| s.responses[*i].tokens.len() as f64).collect::<Vec<_>>());
            ((mean_len / 2.0).round() as usize).max(1)
        }
    };
    let points = responses
        .par_iter()
        .map(|(set, i)| {
            let prompt = set
                .prompt
                .tokens()
                .ok_or_else(|| HarnessError::Input("correlation study needs token prompts".into()))?;
            let tokens = &set.responses[*i].tokens;
            Ok(CorrelationPoint {
                length: tokens.len(),
                full: scn.reward.score_tokens(prompt, tokens)?.value,
                partial: scn.reward.score_partial(prompt, tokens, k)?.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let identity_violations = points.iter().filter(|p| p.length <= k && p.partial != p.full).count();
    let full: Vec<f64> = points.iter().map(|p| p.full).collect();
    let partial: Vec<f64> = points.iter().map(|p| p.partial).collect();
    Ok(CorrelationReport {
        truncate_at: k,
        pearson: stats::pearson(&partial, &full)?,
        identity_violations,
        points,
    })
}

/// Sample sets of one arm on seed `k`, for the correlation study.
pub fn seed_sample_sets(spec: &ExperimentSpec, k: usize, arm: Arm) -> Result<(Scenario, Vec<SampleSet>)> {
    spec.validate()?;
    let scn = Scenario::build(&spec.scenario, SeedTree::new(spec.run_seed(k)))?;
    let sets = sample_sets(&scn, spec, ArmConfig::from_spec(spec, arm))?;
    Ok((scn, sets))
}
