use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use inco_core::io::{load_jsonl, save_jsonl};
use inco_core::objectives::{train, ObjectiveKind};
use inco_core::pairing::{pair_unconstrained, weigh_sample_set, RejectSelection};
use inco_core::policy::mix_seed;
use inco_core::synthesis::synthesize;
use inco_core::{PreferencePair, SampleSet};
use inco_harness::experiments::{correlation_study, eval_for, forced_offpolicy_pairs, run_sweep_with, SweepOptions, SweepResult};
use inco_harness::{emit_comparison, emit_report, evaluate, run_experiment_E1, Arm, ArmConfig, Knob, Scenario, SeedTree};

use crate::config::Config;
use crate::{
    AnalyzeArgs, Cli, Command, InputError, IoArgs, ObjectiveArg, PairArgs, PairStrategy, ReportArgs, ScoreArgs, StrategyArg,
    SweepArgs, SynthArgs, TrainArgs,
};

struct Ctx {
    cfg: Config,
    run: usize,
}

impl Ctx {
    fn scenario(&self) -> Result<Scenario> {
        let spec = &self.cfg.experiment;
        Ok(Scenario::build(&spec.scenario, SeedTree::new(spec.run_seed(self.run)))?)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    if cli.run >= cfg.experiment.num_seeds {
        return Err(InputError(format!("--run {} but the config has {} seeds", cli.run, cfg.experiment.num_seeds)).into());
    }
    let ctx = Ctx { cfg, run: cli.run };
    match cli.command {
        Command::Synth(a) if a.remote => crate::remote::synth(&ctx.cfg, &a),
        Command::Synth(a) => synth(&ctx, &a),
        Command::Score(a) if a.remote => crate::remote::score(&ctx.cfg, &a.io),
        Command::Score(a) => score(&ctx, &a),
        Command::Weigh(a) => weigh(&ctx, &a),
        Command::Pair(a) => pair(&a),
        Command::Train(a) => train_cmd(&ctx, &a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Analyze(a) => analyze(&ctx, &a),
        Command::Report(a) => report(&ctx, &a),
    }
}

fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    load_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn save<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    save_jsonl(path, items).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {} records to {}", items.len(), path.display());
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

pub(crate) fn arm_of(a: &SynthArgs, default_prefix: usize) -> Arm {
    match a.strategy {
        StrategyArg::OnPolicy => Arm::OnPolicy,
        StrategyArg::OffPolicy => Arm::OffPolicy,
        StrategyArg::Continuation => Arm::Continuation {
            prefix_len: a.prefix_tokens.unwrap_or(default_prefix),
        },
        StrategyArg::Rewriting => Arm::Rewriting,
    }
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    if a.prompts.is_some() {
        return Err(InputError("--prompts is only used with --remote".into()).into());
    }
    let spec = &ctx.cfg.experiment;
    let scn = ctx.scenario()?;
    let mut arm = ArmConfig::from_spec(spec, arm_of(a, spec.prefix_len));
    if let Some(t) = a.temperature {
        arm.policy_temperature = t;
    }
    if let Some(n) = a.num_samples {
        arm.num_samples = n;
    }
    let seeds = match a.seed {
        Some(s) => SeedTree::new(mix_seed(spec.run_seed(ctx.run), s)),
        None => scn.seeds,
    };
    let sets = scn
        .instructions
        .iter()
        .enumerate()
        .map(|(i, ins)| synthesize(&scn.policy, Some(&scn.gold), ins, &arm.plan(spec, &seeds, i)))
        .collect::<inco_core::Result<Vec<_>>>()?;
    save(&a.out, &sets)
}

fn score(ctx: &Ctx, a: &ScoreArgs) -> Result<()> {
    let scn = ctx.scenario()?;
    let sets: Vec<SampleSet> = load(&a.io.input)?;
    let scored = sets
        .iter()
        .map(|s| scn.reward.score_sample_set(s))
        .collect::<inco_core::Result<Vec<_>>>()?;
    save(&a.io.out, &scored)
}

fn weigh(ctx: &Ctx, a: &IoArgs) -> Result<()> {
    let scn = ctx.scenario()?;
    let sets: Vec<SampleSet> = load(&a.input)?;
    let weighed = sets
        .iter()
        .map(|s| weigh_sample_set(s, &scn.policy))
        .collect::<inco_core::Result<Vec<_>>>()?;
    save(&a.out, &weighed)
}

fn pair(a: &PairArgs) -> Result<()> {
    let sets: Vec<SampleSet> = load(&a.input)?;
    let pairs: Vec<PreferencePair> = match (a.strategy, &a.off) {
        (PairStrategy::Unconstrained, None) => sets
            .iter()
            .map(pair_unconstrained)
            .collect::<inco_core::Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect(),
        (PairStrategy::Unconstrained, Some(_)) => {
            return Err(InputError("--off is only used with --strategy forced-offpolicy".into()).into())
        }
        (PairStrategy::ForcedOffpolicy, Some(off)) => {
            let off: Vec<SampleSet> = load(off)?;
            let selection = if a.worst_on { RejectSelection::WorstOnPolicy } else { RejectSelection::BestOnPolicy };
            forced_offpolicy_pairs(&sets, &off, selection)?
        }
        (PairStrategy::ForcedOffpolicy, None) => {
            return Err(InputError("forced-offpolicy needs --off with the off-policy sets".into()).into())
        }
    };
    log::info!("{} pairs from {} sets", pairs.len(), sets.len());
    save(&a.out, &pairs)
}

#[derive(Serialize)]
struct TrainSummary {
    pairs: usize,
    final_loss: f64,
    expected_reward: f64,
    policy_expected_reward: f64,
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let spec = &ctx.cfg.experiment;
    let scn = ctx.scenario()?;
    let pairs: Vec<PreferencePair> = load(&a.pairs)?;
    let mut obj = spec.objective.clone();
    if let Some(kind) = a.objective {
        obj.kind = match kind {
            ObjectiveArg::Dpo => ObjectiveKind::Dpo,
            ObjectiveArg::Simpo => ObjectiveKind::Simpo,
            ObjectiveArg::Wpo => ObjectiveKind::Wpo,
        };
    }
    if let Some(b) = a.beta {
        obj.beta = b;
    }
    if a.gamma.is_some() {
        obj.gamma = a.gamma;
    }
    if obj.kind == ObjectiveKind::Simpo && obj.gamma.is_none() {
        obj.gamma = Some(0.0);
    }
    if let Some(lr) = a.lr {
        obj.learning_rate = lr;
    }
    if let Some(e) = a.epochs {
        obj.epochs = e;
    }
    obj.seed = scn.seeds.shuffling();
    let outcome = train(&scn.policy, &scn.policy, &pairs, &obj)?;
    let eval = eval_for(spec, &scn.seeds);
    let summary = TrainSummary {
        pairs: pairs.len(),
        final_loss: outcome.log.last().map_or(f64::NAN, |e| e.loss),
        expected_reward: evaluate(&outcome.model, &scn.reward, &scn.instructions, &eval)?.mean,
        policy_expected_reward: evaluate(&scn.policy, &scn.reward, &scn.instructions, &eval)?.mean,
    };
    if let Some(out) = &a.out {
        outcome.model.save(out).with_context(|| format!("writing {}", out.display()))?;
    }
    print_json(&summary)
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> Result<()> {
    let mut spec = ctx.cfg.experiment.clone();
    if let Some(grid) = a.grid {
        let counts = || -> Result<Vec<usize>> {
            grid.iter()
                .map(|&x| {
                    if x >= 0.0 && x.fract() == 0.0 {
                        Ok(x as usize)
                    } else {
                        Err(InputError(format!("{:?} grid needs non-negative integers, got {x}", a.knob)).into())
                    }
                })
                .collect()
        };
        match a.knob {
            Knob::PrefixLen => spec.prefix_grid = counts()?,
            Knob::Temperature => spec.temperature_grid = grid.clone(),
            Knob::NumSamples => spec.num_samples_grid = counts()?,
        }
    }
    let out = a
        .out
        .or_else(|| spec.output_dir.clone())
        .ok_or_else(|| InputError("sweep needs --out or output_dir in the config".into()))?;
    let result = run_sweep_with(&spec, a.knob, SweepOptions { train: !a.no_train })?;
    for path in emit_report(&result, &out, a.format)? {
        println!("{}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeSummary {
    truncate_at: usize,
    pearson: f64,
    responses: usize,
    identity_violations: usize,
}

fn analyze(ctx: &Ctx, a: &AnalyzeArgs) -> Result<()> {
    if !a.correlation {
        return Err(InputError("nothing to analyze; pass --correlation".into()).into());
    }
    let spec = &ctx.cfg.experiment;
    let scn = ctx.scenario()?;
    let sets: Vec<SampleSet> = match &a.input {
        Some(path) => load(path)?,
        None => inco_harness::experiments::sample_sets(&scn, spec, ArmConfig::from_spec(spec, Arm::OnPolicy))?,
    };
    let report = correlation_study(&scn, &sets, a.truncate_at)?;
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&report)? + "\n";
        std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    print_json(&AnalyzeSummary {
        truncate_at: report.truncate_at,
        pearson: report.pearson,
        responses: report.points.len(),
        identity_violations: report.identity_violations,
    })
}

fn report(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    let written = match &a.from {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
            let result: SweepResult =
                serde_json::from_str(&text).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
            emit_report(&result, &a.out, a.format)?
        }
        None => emit_comparison(&run_experiment_E1(&ctx.cfg.experiment)?, &a.out, a.format)?,
    };
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}
