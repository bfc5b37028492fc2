//! Experiment orchestration.
//!
//! An experiment compares two arms over repeated runs: a plain supervised
//! SOM, and the same SOM trained on whitened features from a learned metric
//! (present when the config carries an `[lmnn]` section). Both arms of a run
//! see the identical split and the identical SOM seed, so their errors are
//! paired.
//!
//! Seeding: by default one split is drawn with `base_seed` and shared by all
//! runs (the metric is then fitted once); with `resample_per_run` run `r`
//! splits with `base_seed + r` and fits its own metric. SOM initialisation
//! for run `r` always uses `base_seed + 10000 + r`.
//!
//! Reports order runs by index, so parallel and serial execution emit
//! identical bytes.

pub mod config;
pub mod report;

use crate::dataset::{
    self, load_csv, load_csv_mapped, load_pair, DatasetError, LabeledDataset, SplitDataset,
    Standardizer,
};
use crate::lmnn::{self, FitOutcome, MahalanobisMetric};
use crate::pca::PcaModel;
use crate::som::{self, SomGrid};
use crate::whitening::{self, LinearTransform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub use config::ExperimentConfig;
pub use report::{
    emit_crossval, emit_report, ArmReport, CrossValEntry, CrossValReport, ExperimentReport,
    LmnnFitReport, ReportFormat, RunRecord, ARM_SOM, ARM_SOM_DML,
};

use report::{mean_std, OptionsEcho, Timings, WhiteningReport};

/// Offset separating SOM-init seeds from split seeds.
const SOM_SEED_OFFSET: u64 = 10_000;
/// Repetitions used by the cross-validation sweep.
pub const CROSSVAL_REPS: usize = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{context}: {message}")]
    Pipeline { context: String, message: String },
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Dataset(_) => "dataset",
            HarnessError::Pipeline { .. } => "pipeline",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Worker threads for run-level parallelism; 1 means serial.
    pub parallel: usize,
    /// Disable the cost-plateau stop so every run trains exactly max_epochs.
    pub strict_epochs: bool,
    /// Skip metric learning and whiten with the identity, making the two
    /// arms statistically indistinguishable.
    pub identity_metric: bool,
    /// Persist the first run's preprocessing and grids as JSON.
    pub save_model: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { parallel: 1, strict_epochs: false, identity_metric: false, save_model: None }
    }
}

/// Everything a run consumes that is independent of the SOM seed.
struct Prepared {
    train: LabeledDataset,
    test: LabeledDataset,
    dml: Option<PreparedDml>,
    standardizer: Option<Standardizer>,
    pca: Option<PcaModel>,
    lmnn_seconds: f64,
}

struct PreparedDml {
    train: LabeledDataset,
    test: LabeledDataset,
    transform: LinearTransform,
    /// Absent under the identity-metric flag.
    fit: Option<FitOutcome>,
}

struct RunOutput {
    som: RunRecord,
    dml: Option<RunRecord>,
    /// The run's own metric fit, in resample mode.
    lmnn_fit: Option<FitOutcome>,
    artifacts: Option<ModelArtifacts>,
    som_seconds: f64,
    lmnn_seconds: f64,
}

struct ModelArtifacts {
    standardizer: Option<Standardizer>,
    pca: Option<PcaModel>,
    transform: Option<LinearTransform>,
    som_grid: SomGrid,
    dml_grid: Option<SomGrid>,
}

/// Persisted preprocessing and trained grids of one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedModel {
    pub class_names: Vec<String>,
    pub csv: dataset::CsvOptions,
    pub standardizer: Option<Standardizer>,
    pub pca: Option<PcaModel>,
    pub arms: Vec<SavedArm>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedArm {
    pub arm: String,
    pub transform: Option<LinearTransform>,
    pub grid: SomGrid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayReport {
    pub arm: String,
    pub rows: usize,
    pub error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InspectReport {
    pub datasets: Vec<DatasetSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub path: String,
    pub rows: usize,
    pub attributes: usize,
    pub classes: Vec<ClassCount>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassCount {
    pub name: String,
    pub count: usize,
}

macro_rules! stage {
    ($ctx:expr, $expr:expr) => {
        $expr.map_err(|e| HarnessError::Pipeline {
            context: ($ctx).to_string(),
            message: e.to_string(),
        })?
    };
}

/// Runs the configured experiment and assembles the report.
pub fn run_experiment(
    config: &ExperimentConfig,
    options: &RunOptions,
) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    if options.identity_metric && config.lmnn.is_none() {
        return Err(HarnessError::Config(
            "the identity-metric flag needs an [lmnn] section to form a second arm".into(),
        ));
    }
    let started = Instant::now();
    let runs = config.experiment.runs;
    let base_seed = config.experiment.base_seed;
    let resample = config.split.resample_per_run && !config.split.uses_files();

    let shared = if resample {
        None
    } else {
        Some(prepare(config, options, base_seed, "shared preparation")?)
    };

    let run_one = |r: usize| -> Result<RunOutput, HarnessError> {
        match &shared {
            Some(prep) => execute_run(r, prep, config, options, false),
            None => {
                let prep = prepare(
                    config,
                    options,
                    base_seed + r as u64,
                    &format!("run {r} preparation"),
                )?;
                execute_run(r, &prep, config, options, true)
            }
        }
    };

    let outputs: Vec<RunOutput> = if options.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallel)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..runs).into_par_iter().map(run_one).collect::<Result<_, _>>())?
    } else {
        (0..runs).map(run_one).collect::<Result<_, _>>()?
    };

    let class_names = match &shared {
        Some(prep) => prep.train.class_names.clone(),
        // resample mode: every run maps labels from the same full file scan
        None => prepare_class_names(config)?,
    };

    let mut arms = vec![assemble_arm(ARM_SOM, outputs.iter().map(|o| o.som.clone()).collect())];
    if config.lmnn.is_some() {
        arms.push(assemble_arm(
            ARM_SOM_DML,
            outputs.iter().map(|o| o.dml.clone().expect("dml arm present")).collect(),
        ));
    }

    let mut lmnn_fits = Vec::new();
    let mut whitening_report = None;
    if let Some(prep) = &shared {
        if let Some(dml) = &prep.dml {
            if let Some(fit) = &dml.fit {
                lmnn_fits.push(fit_report(None, fit));
            }
            whitening_report = Some(WhiteningReport {
                input_dim: dml.transform.input_dim(),
                output_dim: dml.transform.output_dim(),
                dropped_dims: dml.transform.dropped_dims(),
                l: dml.transform.matrix().clone(),
            });
        }
    } else {
        for (r, o) in outputs.iter().enumerate() {
            if let Some(fit) = &o.lmnn_fit {
                lmnn_fits.push(fit_report(Some(r), fit));
            }
        }
    }

    if let Some(path) = &options.save_model {
        let artifacts = outputs
            .iter()
            .find_map(|o| o.artifacts.as_ref())
            .expect("run 0 always carries artifacts");
        save_model(path, config, &class_names, artifacts)?;
    }

    let lmnn_seconds = shared.as_ref().map(|p| p.lmnn_seconds).unwrap_or(0.0)
        + outputs.iter().map(|o| o.lmnn_seconds).sum::<f64>();
    let timings = Timings {
        total_seconds: started.elapsed().as_secs_f64(),
        lmnn_seconds,
        som_seconds: outputs.iter().map(|o| o.som_seconds).sum(),
    };

    Ok(ExperimentReport {
        config: config.clone(),
        options: OptionsEcho {
            strict_epochs: options.strict_epochs,
            identity_metric: options.identity_metric,
        },
        class_names,
        arms,
        lmnn_fits,
        whitening: whitening_report,
        timings,
    })
}

fn fit_report(run: Option<usize>, fit: &FitOutcome) -> LmnnFitReport {
    LmnnFitReport {
        run,
        converged: fit.converged,
        initial_loss: fit.initial_loss,
        final_loss: fit.final_loss,
        trace: fit.iterations.clone(),
    }
}

fn assemble_arm(name: &str, runs: Vec<RunRecord>) -> ArmReport {
    let train: Vec<f64> = runs.iter().map(|r| r.train_error).collect();
    let test: Vec<f64> = runs.iter().map(|r| r.test_error).collect();
    let (mean_train_error, std_train_error) = mean_std(&train);
    let (mean_test_error, std_test_error) = mean_std(&test);
    ArmReport {
        arm: name.to_string(),
        runs,
        mean_train_error,
        std_train_error,
        mean_test_error,
        std_test_error,
    }
}

/// Loads, splits, and preprocesses the data, and fits the metric when the
/// config asks for one.
fn prepare(
    config: &ExperimentConfig,
    options: &RunOptions,
    split_seed: u64,
    context: &str,
) -> Result<Prepared, HarnessError> {
    let opts = config.csv_options();
    let SplitDataset { mut train, mut test } = if config.split.uses_files() {
        load_pair(
            config.split.train_path.as_ref().expect("validated"),
            config.split.test_path.as_ref().expect("validated"),
            &opts,
        )?
    } else {
        let full = load_csv(&config.dataset.path, &opts)?;
        dataset::split(&full, config.split.fraction, split_seed, config.split.stratified)?
    };

    let standardizer = if config.dataset.standardize {
        let s = stage!(context, Standardizer::fit(&train.x));
        train = train.with_attributes(stage!(context, s.apply(&train.x)));
        test = test.with_attributes(stage!(context, s.apply(&test.x)));
        Some(s)
    } else {
        None
    };

    let pca = if let Some(r) = config.dataset.pca_components {
        let model = stage!(context, PcaModel::fit(&train.x, r));
        train = train.with_attributes(stage!(context, model.transform(&train.x)));
        test = test.with_attributes(stage!(context, model.transform(&test.x)));
        Some(model)
    } else {
        None
    };

    let mut lmnn_seconds = 0.0;
    let dml = if let Some(lmnn_config) = config.lmnn_config() {
        let (metric, fit) = if options.identity_metric {
            (MahalanobisMetric::identity(train.d()), None)
        } else {
            let t = Instant::now();
            let outcome = stage!(context, lmnn::fit(&train, &lmnn_config));
            lmnn_seconds = t.elapsed().as_secs_f64();
            (outcome.metric.clone(), Some(outcome))
        };
        let transform = stage!(context, whitening::decompose(&metric, whitening::DEFAULT_EPS));
        let dml_train = train.with_attributes(stage!(context, transform.apply(&train.x)));
        let dml_test = test.with_attributes(stage!(context, transform.apply(&test.x)));
        Some(PreparedDml { train: dml_train, test: dml_test, transform, fit })
    } else {
        None
    };

    Ok(Prepared { train, test, dml, standardizer, pca, lmnn_seconds })
}

/// Class-name mapping without preprocessing, for resample-mode reports.
fn prepare_class_names(config: &ExperimentConfig) -> Result<Vec<String>, HarnessError> {
    let opts = config.csv_options();
    if config.split.uses_files() {
        let pair = load_pair(
            config.split.train_path.as_ref().expect("validated"),
            config.split.test_path.as_ref().expect("validated"),
            &opts,
        )?;
        Ok(pair.train.class_names)
    } else {
        Ok(load_csv(&config.dataset.path, &opts)?.class_names)
    }
}

/// Trains and evaluates both arms of run `r` on prepared data.
fn execute_run(
    r: usize,
    prep: &Prepared,
    config: &ExperimentConfig,
    options: &RunOptions,
    own_fit: bool,
) -> Result<RunOutput, HarnessError> {
    let started = Instant::now();
    let som_seed = config.experiment.base_seed + SOM_SEED_OFFSET + r as u64;
    let som_config = config.som_config(som_seed, options.strict_epochs);

    let som_rec = train_arm(r, ARM_SOM, &som_config, &prep.train, &prep.test)?;
    let (som_grid, som) = som_rec;

    let mut dml = None;
    let mut dml_grid = None;
    if let Some(pd) = &prep.dml {
        let (grid, rec) = train_arm(r, ARM_SOM_DML, &som_config, &pd.train, &pd.test)?;
        dml = Some(rec);
        dml_grid = Some(grid);
    }

    let artifacts = (r == 0).then(|| ModelArtifacts {
        standardizer: prep.standardizer.clone(),
        pca: prep.pca.clone(),
        transform: prep.dml.as_ref().map(|d| d.transform.clone()),
        som_grid,
        dml_grid,
    });

    Ok(RunOutput {
        som,
        dml,
        lmnn_fit: if own_fit { prep.dml.as_ref().and_then(|d| d.fit.clone()) } else { None },
        artifacts,
        som_seconds: started.elapsed().as_secs_f64(),
        lmnn_seconds: if own_fit { prep.lmnn_seconds } else { 0.0 },
    })
}

fn train_arm(
    r: usize,
    arm: &str,
    som_config: &som::SomConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<(SomGrid, RunRecord), HarnessError> {
    let ctx = format!("run {r}, arm {arm}");
    let grid = stage!(&ctx, som::init_grid(som_config, train.d(), train.n_classes));
    let init_grid_hash = grid_hash(&grid);
    let trained = stage!(&ctx, som::train_from(grid, train, som_config));
    let train_error = stage!(&ctx, som::classification_error(&trained.grid, train));
    let test_error = stage!(&ctx, som::classification_error(&trained.grid, test));
    Ok((
        trained.grid,
        RunRecord {
            run: r,
            train_error,
            test_error,
            epochs_run: trained.epochs_run,
            stopped_by: trained.stop_reason,
            init_grid_hash,
        },
    ))
}

/// SHA-256 over the grid's shape and weights, hex-encoded.
pub fn grid_hash(grid: &SomGrid) -> String {
    let mut h = Sha256::new();
    for dim in [grid.rows(), grid.cols(), grid.attribute_dim(), grid.class_dim()] {
        h.update((dim as u64).to_le_bytes());
    }
    for &v in grid.attribute_parts().data() {
        h.update(v.to_le_bytes());
    }
    for &v in grid.class_parts().data() {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn save_model(
    path: &Path,
    config: &ExperimentConfig,
    class_names: &[String],
    artifacts: &ModelArtifacts,
) -> Result<(), HarnessError> {
    let mut arms = vec![SavedArm {
        arm: ARM_SOM.to_string(),
        transform: None,
        grid: artifacts.som_grid.clone(),
    }];
    if let Some(grid) = &artifacts.dml_grid {
        arms.push(SavedArm {
            arm: ARM_SOM_DML.to_string(),
            transform: artifacts.transform.clone(),
            grid: grid.clone(),
        });
    }
    let model = SavedModel {
        class_names: class_names.to_vec(),
        csv: config.csv_options(),
        standardizer: artifacts.standardizer.clone(),
        pca: artifacts.pca.clone(),
        arms,
    };
    let mut body = serde_json::to_string_pretty(&model)
        .map_err(|e| HarnessError::Config(format!("model serialization: {e}")))?;
    body.push('\n');
    std::fs::write(path, body)
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// Re-evaluates a persisted model on a fresh CSV with the same schema.
pub fn replay(
    model_path: &Path,
    data_path: &Path,
    arm: Option<&str>,
) -> Result<ReplayReport, HarnessError> {
    let text = std::fs::read_to_string(model_path)
        .map_err(|source| HarnessError::Io { path: model_path.to_path_buf(), source })?;
    let model: SavedModel = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", model_path.display())))?;

    let wanted = arm.unwrap_or(if model.arms.iter().any(|a| a.arm == ARM_SOM_DML) {
        ARM_SOM_DML
    } else {
        ARM_SOM
    });
    let saved = model
        .arms
        .iter()
        .find(|a| a.arm == wanted)
        .ok_or_else(|| HarnessError::Config(format!("model has no arm {wanted:?}")))?;

    let data = load_csv_mapped(data_path, &model.csv, &model.class_names)?;
    let ctx = format!("replay arm {wanted}");
    let mut x = data.x.clone();
    if let Some(s) = &model.standardizer {
        x = stage!(&ctx, s.apply(&x));
    }
    if let Some(p) = &model.pca {
        x = stage!(&ctx, p.transform(&x));
    }
    if let Some(t) = &saved.transform {
        x = stage!(&ctx, t.apply(&x));
    }
    let data = data.with_attributes(x);
    let error = stage!(&ctx, som::classification_error(&saved.grid, &data));
    Ok(ReplayReport { arm: wanted.to_string(), rows: data.n(), error })
}

/// Dataset statistics for the configured source files.
pub fn inspect(config: &ExperimentConfig) -> Result<InspectReport, HarnessError> {
    config.validate()?;
    let opts = config.csv_options();
    let mut datasets = Vec::new();
    if config.split.uses_files() {
        let train_path = config.split.train_path.as_ref().expect("validated");
        let test_path = config.split.test_path.as_ref().expect("validated");
        let pair = load_pair(train_path, test_path, &opts)?;
        datasets.push(summarize(train_path, &pair.train));
        datasets.push(summarize(test_path, &pair.test));
    } else {
        let data = load_csv(&config.dataset.path, &opts)?;
        datasets.push(summarize(&config.dataset.path, &data));
    }
    Ok(InspectReport { datasets })
}

fn summarize(path: &Path, data: &LabeledDataset) -> DatasetSummary {
    DatasetSummary {
        path: path.display().to_string(),
        rows: data.n(),
        attributes: data.d(),
        classes: data
            .class_names
            .iter()
            .zip(data.class_counts())
            .map(|(name, count)| ClassCount { name: name.clone(), count })
            .collect(),
    }
}

/// Sweeps `k`, repeating a single-run experiment `CROSSVAL_REPS` times per
/// value with seeds `base_seed .. base_seed + reps`, and selects the `k`
/// minimising mean test error (ties to the smaller `k`).
pub fn run_crossval_k(
    config: &ExperimentConfig,
    k_values: &[usize],
    options: &RunOptions,
) -> Result<CrossValReport, HarnessError> {
    config.validate()?;
    if config.lmnn.is_none() {
        return Err(HarnessError::Config("cross-validation over k needs an [lmnn] section".into()));
    }
    if k_values.is_empty() {
        return Err(HarnessError::Config("no k values given".into()));
    }
    check_k_feasibility(config, k_values)?;

    let mut entries = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let mut rep_config = config.clone();
        rep_config.lmnn.as_mut().expect("checked").k = k;
        rep_config.experiment.runs = 1;

        let mut train_errors = Vec::with_capacity(CROSSVAL_REPS);
        let mut test_errors = Vec::with_capacity(CROSSVAL_REPS);
        for rep in 0..CROSSVAL_REPS {
            rep_config.experiment.base_seed = config.experiment.base_seed + rep as u64;
            let rep_options = RunOptions { save_model: None, parallel: 1, ..options.clone() };
            let report = run_experiment(&rep_config, &rep_options)?;
            let arm = report.arm(ARM_SOM_DML).expect("lmnn arm present");
            train_errors.push(arm.mean_train_error);
            test_errors.push(arm.mean_test_error);
        }
        let (mean_train_error, _) = mean_std(&train_errors);
        let (mean_test_error, _) = mean_std(&test_errors);
        entries.push(CrossValEntry { k, mean_train_error, mean_test_error });
    }

    let selected_k = select_k(&entries);
    Ok(CrossValReport { config: config.clone(), repetitions: CROSSVAL_REPS, entries, selected_k })
}

/// The `k` with the smallest mean test error; exact ties go to the smaller `k`.
pub fn select_k(entries: &[CrossValEntry]) -> usize {
    let mut best = &entries[0];
    for e in &entries[1..] {
        if e.mean_test_error < best.mean_test_error
            || (e.mean_test_error == best.mean_test_error && e.k < best.k)
        {
            best = e;
        }
    }
    best.k
}

/// Rejects any swept `k` that the smallest training class cannot support.
/// Exact for stratified and pre-split modes; plain random splits are checked
/// against the full class counts and may still fail at run time.
fn check_k_feasibility(config: &ExperimentConfig, k_values: &[usize]) -> Result<(), HarnessError> {
    let opts = config.csv_options();
    let min_train_count = if config.split.uses_files() {
        let pair = load_pair(
            config.split.train_path.as_ref().expect("validated"),
            config.split.test_path.as_ref().expect("validated"),
            &opts,
        )?;
        pair.train.class_counts().into_iter().min().unwrap_or(0)
    } else {
        let full = load_csv(&config.dataset.path, &opts)?;
        let counts = full.class_counts();
        if config.split.stratified {
            dataset::stratified_train_counts(&counts, config.split.fraction)
                .into_iter()
                .min()
                .unwrap_or(0)
        } else {
            counts.into_iter().min().unwrap_or(0)
        }
    };
    for &k in k_values {
        if k == 0 {
            return Err(HarnessError::Config("k values must be at least 1".into()));
        }
        if k + 1 > min_train_count {
            return Err(HarnessError::Config(format!(
                "k = {k} needs {} same-class training samples but the smallest class provides {min_train_count}",
                k + 1
            )));
        }
    }
    Ok(())
}
