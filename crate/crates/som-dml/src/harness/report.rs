//! Experiment and cross-validation reports plus their serialized forms.
//!
//! JSON carries the full report; CSV is the tabular cut: one row per run per
//! arm plus one `mean` summary row per arm, and for cross-validation one
//! plot-ready row per swept `k`. Emitting the same report twice produces
//! byte-identical files.

use crate::lmnn::IterRecord;
use crate::matrix::Mat;
use crate::som::StopReason;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use super::config::ExperimentConfig;
use super::HarnessError;

pub const ARM_SOM: &str = "som";
pub const ARM_SOM_DML: &str = "som+dml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format {other:?}, expected json or csv")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub options: OptionsEcho,
    pub class_names: Vec<String>,
    pub arms: Vec<ArmReport>,
    /// One entry per metric fit; `run` is absent for the shared-split fit.
    pub lmnn_fits: Vec<LmnnFitReport>,
    /// Whitening map of the shared-split fit, when one exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub whitening: Option<WhiteningReport>,
    /// Wall-clock seconds; excluded from files so reports stay reproducible.
    #[serde(skip)]
    pub timings: Timings,
}

/// Result-affecting switches the report was produced under.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptionsEcho {
    pub strict_epochs: bool,
    pub identity_metric: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub runs: Vec<RunRecord>,
    pub mean_train_error: f64,
    pub std_train_error: f64,
    pub mean_test_error: f64,
    pub std_test_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub train_error: f64,
    pub test_error: f64,
    pub epochs_run: usize,
    pub stopped_by: StopReason,
    pub init_grid_hash: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LmnnFitReport {
    /// Run the fit belongs to; absent when all runs share one split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<usize>,
    pub converged: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub trace: Vec<IterRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WhiteningReport {
    pub input_dim: usize,
    pub output_dim: usize,
    pub dropped_dims: usize,
    pub l: Mat,
}

#[derive(Clone, Debug, Default)]
pub struct Timings {
    pub total_seconds: f64,
    pub lmnn_seconds: f64,
    pub som_seconds: f64,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossValReport {
    pub config: ExperimentConfig,
    pub repetitions: usize,
    pub entries: Vec<CrossValEntry>,
    pub selected_k: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossValEntry {
    pub k: usize,
    pub mean_train_error: f64,
    pub mean_test_error: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn report_to_json(report: &ExperimentReport) -> Result<String, HarnessError> {
    let mut s = serde_json::to_string_pretty(report)
        .map_err(|e| HarnessError::Config(format!("report serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn report_to_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("run,arm,train_error,test_error\n");
    for arm in &report.arms {
        for rec in &arm.runs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                rec.run, arm.arm, rec.train_error, rec.test_error
            ));
        }
    }
    for arm in &report.arms {
        out.push_str(&format!(
            "mean,{},{},{}\n",
            arm.arm, arm.mean_train_error, arm.mean_test_error
        ));
    }
    out
}

pub fn crossval_to_json(report: &CrossValReport) -> Result<String, HarnessError> {
    let mut s = serde_json::to_string_pretty(report)
        .map_err(|e| HarnessError::Config(format!("report serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn crossval_to_csv(report: &CrossValReport) -> String {
    let mut out = String::from("k,mean_train_error,mean_test_error\n");
    for e in &report.entries {
        out.push_str(&format!("{},{},{}\n", e.k, e.mean_train_error, e.mean_test_error));
    }
    out
}

pub fn emit_report(
    report: &ExperimentReport,
    path: &Path,
    format: ReportFormat,
) -> Result<(), HarnessError> {
    let body = match format {
        ReportFormat::Json => report_to_json(report)?,
        ReportFormat::Csv => report_to_csv(report),
    };
    write_file(path, &body)
}

pub fn emit_crossval(
    report: &CrossValReport,
    path: &Path,
    format: ReportFormat,
) -> Result<(), HarnessError> {
    let body = match format {
        ReportFormat::Json => crossval_to_json(report)?,
        ReportFormat::Csv => crossval_to_csv(report),
    };
    write_file(path, &body)
}

fn write_file(path: &Path, body: &str) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(path)
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    f.write_all(body.as_bytes())
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}
