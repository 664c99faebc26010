use std::path::PathBuf;

use inco_harness::experiments::{run_sweep_with, SweepOptions, SweepResult};
use inco_harness::{emit_report, ExperimentSpec, Knob, ReportFormat, ScenarioSpec};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mini_sweep")
}

fn spec() -> ExperimentSpec {
    ExperimentSpec {
        seed: 7,
        num_seeds: 2,
        scenario: ScenarioSpec {
            vocab_size: 8,
            num_instructions: 12,
            max_tokens: 12,
            ..ScenarioSpec::default()
        },
        num_samples: 3,
        temperature_grid: vec![0.5, 0.8],
        ..ExperimentSpec::default()
    }
}

/// Set `INCO_BLESS=1` to rewrite the golden files after an intended change.
#[test]
fn mini_sweep_report_matches_golden() {
    let sweep = run_sweep_with(&spec(), Knob::Temperature, SweepOptions { train: false }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&sweep, dir.path(), ReportFormat::All).unwrap();
    assert_eq!(written.len(), 3);
    let bless = std::env::var_os("INCO_BLESS").is_some();
    for path in written {
        let name = path.file_name().unwrap();
        let got = std::fs::read_to_string(&path).unwrap();
        let golden = golden_dir().join(name);
        if bless {
            std::fs::create_dir_all(golden_dir()).unwrap();
            std::fs::write(&golden, &got).unwrap();
        }
        let want = std::fs::read_to_string(&golden).unwrap_or_else(|e| panic!("{}: {e}", golden.display()));
        assert_eq!(got, want, "{} differs from golden", name.to_string_lossy());
    }
}

#[test]
fn untrained_sweep_json_round_trips() {
    let sweep = run_sweep_with(&spec(), Knob::Temperature, SweepOptions { train: false }).unwrap();
    assert!(sweep.records.iter().all(|r| r.expected_reward.is_none()));
    assert!(sweep.curve.iter().all(|p| p.y.is_finite() && p.y_smoothed.is_finite()));
    let dir = tempfile::tempdir().unwrap();
    emit_report(&sweep, dir.path(), ReportFormat::Json).unwrap();
    let text = std::fs::read_to_string(dir.path().join("sweep.json")).unwrap();
    let back: SweepResult = serde_json::from_str(&text).unwrap();
    assert_eq!(back, sweep);
}
