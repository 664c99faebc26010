//! CSV and JSON report files with a fixed column order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::experiments::{ComparisonReport, CurvePoint, SweepResult};

pub const SWEEP_HEADER: [&str; 6] = ["knob", "mean_reward", "mean_weight", "mean_margin", "expected_reward", "seed"];
pub const CURVE_HEADER: [&str; 3] = ["x", "y", "y_smoothed"];
pub const COMPARISON_HEADER: [&str; 8] = [
    "arm",
    "seed",
    "mean_reward",
    "mean_weight",
    "mean_margin",
    "num_pairs",
    "expected_reward",
    "final_loss",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    #[default]
    All,
}

impl std::str::FromStr for ReportFormat {
    type Err = crate::HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "all" => Ok(Self::All),
            other => input(format!("unknown report format {other:?}")),
        }
    }
}

impl ReportFormat {
    fn csv(self) -> bool {
        self != Self::Json
    }

    fn json(self) -> bool {
        self != Self::Csv
    }
}

fn prepare(dir: &Path) -> Result<()> {
    if dir.as_os_str().is_empty() {
        return input("output directory is empty");
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for p in curve {
        w.write_record([p.x.to_string(), p.y.to_string(), p.y_smoothed.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `sweep.csv`, `curve.csv` and `sweep.json` under `dir`; returns
/// the paths written.
pub fn emit_report(result: &SweepResult, dir: impl AsRef<Path>, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    prepare(dir)?;
    if result.records.is_empty() {
        return input("no sweep records to report");
    }
    let mut written = Vec::new();
    if format.csv() {
        let path = dir.join("sweep.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(SWEEP_HEADER)?;
        for r in &result.records {
            w.write_record([
                r.knob.to_string(),
                r.mean_reward.to_string(),
                r.mean_weight.to_string(),
                r.mean_margin.to_string(),
                r.expected_reward.map(|v| v.to_string()).unwrap_or_default(),
                r.seed.to_string(),
            ])?;
        }
        w.flush()?;
        written.push(path);
        let path = dir.join("curve.csv");
        write_curve_csv(&path, &result.curve)?;
        written.push(path);
    }
    if format.json() {
        written.push(write_json(dir.join("sweep.json"), result)?);
    }
    Ok(written)
}

/// Writes `comparison.csv` and `comparison.json` under `dir`.
pub fn emit_comparison(report: &ComparisonReport, dir: impl AsRef<Path>, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    prepare(dir)?;
    if report.arms.is_empty() {
        return input("no arms to report");
    }
    let mut written = Vec::new();
    if format.csv() {
        let path = dir.join("comparison.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(COMPARISON_HEADER)?;
        for a in &report.arms {
            w.write_record([
                a.arm.clone(),
                a.seed.to_string(),
                a.dataset.mean_reward.to_string(),
                a.dataset.mean_weight.to_string(),
                a.dataset.mean_margin.to_string(),
                a.dataset.num_pairs.to_string(),
                a.expected_reward.to_string(),
                a.final_loss.to_string(),
            ])?;
        }
        w.flush()?;
        written.push(path);
    }
    if format.json() {
        written.push(write_json(dir.join("comparison.json"), report)?);
    }
    Ok(written)
}
