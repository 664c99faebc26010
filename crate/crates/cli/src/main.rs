//! `inco`: synthesize, score, weigh and pair preference data, train on it,
//! and run the desk-scale sweeps.

mod commands;
mod config;
mod remote;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use inco_gateway::GatewayError;
use inco_harness::HarnessError;

/// Error caused by the invocation rather than the run; exits with 1.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Debug, Parser)]
#[command(name = "inco", version, about = "Preference-data synthesis by prefix continuation")]
pub struct Cli {
    /// TOML config: experiment settings plus optional [gateway.*] endpoints.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Which seed run of the config to build the scenario from.
    #[arg(long, global = true, default_value_t = 0)]
    pub run: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample responses per instruction with one strategy.
    Synth(SynthArgs),
    /// Attach rewards to sample sets.
    Score(ScoreArgs),
    /// Attach consistency weights under the scenario policy.
    Weigh(IoArgs),
    /// Build preference pairs from scored sample sets.
    Pair(PairArgs),
    /// Train the scenario policy on preference pairs.
    Train(TrainArgs),
    /// Run a knob sweep and write the report.
    Sweep(SweepArgs),
    /// Partial versus full reward correlation.
    Analyze(AnalyzeArgs),
    /// Write report tables from a saved sweep or a fresh arm comparison.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    OnPolicy,
    OffPolicy,
    Continuation,
    Rewriting,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "continuation")]
    pub strategy: StrategyArg,
    /// External prefix length for continuation.
    #[arg(long)]
    pub prefix_tokens: Option<usize>,
    /// Policy sampling temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub num_samples: Option<usize>,
    /// Sampling seed; defaults to the scenario's own seed tree.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Query the configured endpoints instead of the tabular models.
    #[arg(long)]
    pub remote: bool,
    /// Instructions JSONL with text prompts, for --remote.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IoArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub io: IoArgs,
    /// Score with the configured reward endpoint.
    #[arg(long)]
    pub remote: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairStrategy {
    Unconstrained,
    ForcedOffpolicy,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Scored sample sets; the on-policy sets for forced-offpolicy.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Scored off-policy sets, for forced-offpolicy.
    #[arg(long)]
    pub off: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "unconstrained")]
    pub strategy: PairStrategy,
    /// Reject the worst on-policy response instead of the best.
    #[arg(long)]
    pub worst_on: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Dpo,
    Simpo,
    Wpo,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Where to save the trained model snapshot.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// prefix-len, temperature or num-samples.
    #[arg(long)]
    pub knob: inco_harness::Knob,
    /// Comma-separated grid overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Only build datasets; skip training and evaluation.
    #[arg(long)]
    pub no_train: bool,
    #[arg(long, default_value = "all")]
    pub format: inco_harness::ReportFormat,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run the partial/full reward correlation study.
    #[arg(long)]
    pub correlation: bool,
    /// Truncation length; defaults to half the mean response length.
    #[arg(long)]
    pub truncate_at: Option<usize>,
    /// Sample sets to analyze; defaults to fresh on-policy samples.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Write the per-response points as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Saved sweep.json to re-emit; without it the on/off/continuation
    /// comparison is run.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    pub format: inco_harness::ReportFormat,
    #[arg(long)]
    pub out: PathBuf,
}

/// 1 for bad input anywhere in the cause chain, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use inco_core::Error as Core;
    let input = err.chain().any(|cause| {
        cause.is::<InputError>()
            || matches!(
                cause.downcast_ref::<HarnessError>(),
                Some(HarnessError::Input(_) | HarnessError::UndefinedCorrelation)
            )
            || matches!(
                cause.downcast_ref::<Core>(),
                Some(Core::InvalidInput(_) | Core::InvalidToken { .. } | Core::Template(_) | Core::Snapshot(_) | Core::Json(_))
            )
            || matches!(cause.downcast_ref::<GatewayError>(), Some(GatewayError::Config(_)))
            || cause
                .downcast_ref::<std::io::Error>()
                .is_some_and(|e| e.kind() == std::io::ErrorKind::NotFound)
    });
    if input {
        1
    } else {
        2
    }
}

/// The cause chain joined by ": ", skipping causes already quoted by
/// their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
