//! Command-line front end for the experiment harness.

use clap::{Parser, Subcommand};
use som_dml::harness::{
    self, emit_crossval, emit_report, ExperimentConfig, HarnessError, ReportFormat, RunOptions,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "som-dml",
    version,
    about = "Supervised SOM classification with learned-metric whitening"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write its report.
    Run {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Report destination.
        #[arg(long)]
        out: PathBuf,
        /// Report format: json or csv.
        #[arg(long, default_value = "json")]
        format: String,
        /// Worker threads for run-level parallelism.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Train every run for exactly max_epochs.
        #[arg(long)]
        strict_epochs: bool,
        /// Replace the learned metric with the identity (null-test mode).
        #[arg(long)]
        debug_identity_metric: bool,
        /// Persist the first run's preprocessing and grids as JSON.
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Sweep the number of target neighbours and pick the best by test error.
    CrossvalK {
        /// Experiment TOML file (its [lmnn] section supplies defaults).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated k values, e.g. 1,2,3,4,5.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        /// Report destination.
        #[arg(long)]
        out: PathBuf,
        /// Report format: json or csv.
        #[arg(long, default_value = "json")]
        format: String,
        /// Train every run for exactly max_epochs.
        #[arg(long)]
        strict_epochs: bool,
    },
    /// Print statistics for the configured dataset.
    Inspect {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-evaluate a saved model on a CSV file with the same schema.
    Replay {
        /// Model JSON written by `run --save-model`.
        #[arg(long)]
        model: PathBuf,
        /// CSV file to evaluate.
        #[arg(long)]
        data: PathBuf,
        /// Which persisted arm to use (defaults to som+dml when present).
        #[arg(long)]
        arm: Option<String>,
    },
}

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        let record = serde_json::json!({ "kind": e.kind(), "message": e.to_string() });
        eprintln!("{record}");
        std::process::exit(1);
    }
}

fn parse_format(s: &str) -> Result<ReportFormat, HarnessError> {
    s.parse().map_err(HarnessError::Config)
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            parallel,
            strict_epochs,
            debug_identity_metric,
            save_model,
        } => {
            let format = parse_format(&format)?;
            let config = ExperimentConfig::load(&config)?;
            let options = RunOptions {
                parallel: parallel.max(1),
                strict_epochs,
                identity_metric: debug_identity_metric,
                save_model,
            };
            let report = harness::run_experiment(&config, &options)?;
            emit_report(&report, &out, format)?;
            for arm in &report.arms {
                println!(
                    "{}: mean train error {:.2}%, mean test error {:.2}% (std {:.2}) over {} runs",
                    arm.arm,
                    arm.mean_train_error,
                    arm.mean_test_error,
                    arm.std_test_error,
                    arm.runs.len()
                );
            }
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::CrossvalK { config, k, out, format, strict_epochs } => {
            let format = parse_format(&format)?;
            let config = ExperimentConfig::load(&config)?;
            let options = RunOptions { strict_epochs, ..RunOptions::default() };
            let report = harness::run_crossval_k(&config, &k, &options)?;
            emit_crossval(&report, &out, format)?;
            for e in &report.entries {
                println!(
                    "k={}: mean train error {:.2}%, mean test error {:.2}%",
                    e.k, e.mean_train_error, e.mean_test_error
                );
            }
            println!("selected k = {}", report.selected_k);
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Inspect { config } => {
            let config = ExperimentConfig::load(&config)?;
            let report = harness::inspect(&config)?;
            let body = serde_json::to_string_pretty(&report)
                .map_err(|e| HarnessError::Config(format!("report serialization: {e}")))?;
            println!("{body}");
            Ok(())
        }
        Command::Replay { model, data, arm } => {
            let report = harness::replay(&model, &data, arm.as_deref())?;
            let body = serde_json::to_string_pretty(&report)
                .map_err(|e| HarnessError::Config(format!("report serialization: {e}")))?;
            println!("{body}");
            Ok(())
        }
    }
}
