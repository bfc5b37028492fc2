//! Experiment configuration: a TOML file with one section per pipeline stage.
//!
//! ```toml
//! [dataset]
//! path = "data/wine.csv"
//! label_column = "last"      # or a 0-based column index
//! has_header = true
//! standardize = true
//! # pca_components = 40      # omit to skip PCA
//!
//! [split]                    # optional; these are the defaults
//! fraction = 0.7
//! stratified = true
//! resample_per_run = false
//! # train_path/test_path replace fraction splitting entirely
//!
//! [som]
//! rows = 4
//! cols = 4
//! # mu0, lambda, alpha, max_epochs, patience, init_std may override defaults
//!
//! [lmnn]                     # presence enables the som+dml arm
//! k = 2
//! # c, step_size, max_iters, tol may override defaults
//!
//! [experiment]
//! runs = 100
//! base_seed = 42
//! ```

use crate::dataset::{CsvOptions, LabelColumn};
use crate::lmnn::LmnnConfig;
use crate::som::SomConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::HarnessError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub split: SplitSection,
    pub som: SomSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lmnn: Option<LmnnSection>,
    pub experiment: ExperimentSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: LabelColumnSpec,
    #[serde(default = "default_true")]
    pub has_header: bool,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_components: Option<usize>,
}

/// `"last"` or a 0-based column index.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumnSpec {
    Index(usize),
    Named(String),
}

fn default_label_column() -> LabelColumnSpec {
    LabelColumnSpec::Named("last".into())
}

fn default_true() -> bool {
    true
}

fn default_fraction() -> f64 {
    0.7
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(default)]
    pub resample_per_run: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            fraction: default_fraction(),
            stratified: true,
            resample_per_run: false,
            train_path: None,
            test_path: None,
        }
    }
}

impl SplitSection {
    pub fn uses_files(&self) -> bool {
        self.train_path.is_some()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SomSection {
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmnnSection {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub runs: usize,
    pub base_seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.experiment.runs == 0 {
            return Err(HarnessError::Config("experiment.runs must be at least 1".into()));
        }
        if let LabelColumnSpec::Named(name) = &self.dataset.label_column {
            if name != "last" {
                return Err(HarnessError::Config(format!(
                    "dataset.label_column must be \"last\" or a column index, got {name:?}"
                )));
            }
        }
        if let Some(pca) = self.dataset.pca_components {
            if pca == 0 {
                return Err(HarnessError::Config(
                    "dataset.pca_components must be at least 1 when given".into(),
                ));
            }
        }
        let s = &self.split;
        if s.train_path.is_some() != s.test_path.is_some() {
            return Err(HarnessError::Config(
                "split.train_path and split.test_path must be given together".into(),
            ));
        }
        if s.uses_files() && s.resample_per_run {
            return Err(HarnessError::Config(
                "split.resample_per_run has no meaning with pre-split files".into(),
            ));
        }
        if !s.uses_files() && !(s.fraction > 0.0 && s.fraction < 1.0) {
            return Err(HarnessError::Config(format!(
                "split.fraction must lie strictly between 0 and 1, got {}",
                s.fraction
            )));
        }
        if self.som.rows == 0 || self.som.cols == 0 {
            return Err(HarnessError::Config(format!(
                "som grid must be non-empty, got {}x{}",
                self.som.rows, self.som.cols
            )));
        }
        if let Some(lmnn) = &self.lmnn {
            if lmnn.k == 0 {
                return Err(HarnessError::Config("lmnn.k must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            label_column: match &self.dataset.label_column {
                LabelColumnSpec::Index(i) => LabelColumn::Index(*i),
                LabelColumnSpec::Named(_) => LabelColumn::Last,
            },
            has_header: self.dataset.has_header,
        }
    }

    /// SOM settings for one run; `strict_epochs` pins the epoch count by
    /// making the plateau rule unreachable.
    pub fn som_config(&self, seed: u64, strict_epochs: bool) -> SomConfig {
        let mut c = SomConfig::new(self.som.rows, self.som.cols, seed);
        if let Some(v) = self.som.mu0 {
            c.mu0 = v;
        }
        if let Some(v) = self.som.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.som.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.som.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.som.patience {
            c.patience = v;
        }
        if let Some(v) = self.som.init_std {
            c.init_std = v;
        }
        if strict_epochs {
            c.patience = c.max_epochs;
        }
        c
    }

    pub fn lmnn_config(&self) -> Option<LmnnConfig> {
        self.lmnn.as_ref().map(|s| {
            let mut c = LmnnConfig::new(s.k);
            if let Some(v) = s.c {
                c.c = v;
            }
            if let Some(v) = s.step_size {
                c.step_size = v;
            }
            if let Some(v) = s.max_iters {
                c.max_iters = v;
            }
            if let Some(v) = s.tol {
                c.tol = v;
            }
            c
        })
    }
}
