//! Desk-scale experiments for prefix-continuation preference data:
//! scenario construction, exact evaluation, comparisons, sweeps,
//! correlation study and report emission.

pub mod error;
pub mod eval;
pub mod experiments;
pub mod report;
pub mod scenario;
pub mod stats;

pub use error::{HarnessError, Result};
pub use eval::{evaluate, expected_reward, EvalConfig, EvalMethod, EvalStats};
pub use experiments::{
    build_dataset, correlation_study, run_comparison, run_experiment_E1, run_sweep, Arm, ArmConfig, ComparisonReport, Knob,
    SweepRecord, SweepResult,
};
pub use report::{emit_comparison, emit_report, ReportFormat};
pub use scenario::{ExperimentSpec, Scenario, ScenarioSpec, SeedTree};
pub use stats::{gaussian_smooth, pearson};
