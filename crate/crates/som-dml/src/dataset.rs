//! CSV-backed labeled datasets, seeded train/test splits, one-hot labels and
//! the train-fitted standardizer.
//!
//! Label cells are treated as categorical strings and mapped to class indices
//! in first-appearance order; the mapping is recorded on the dataset so
//! reports and replays can translate back.

use crate::matrix::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no data rows")]
    Empty { path: PathBuf },
    #[error("{path}: row at line {line} has {got} fields, expected {expected}")]
    RaggedRow { path: PathBuf, line: u64, expected: usize, got: usize },
    #[error("{path}: cell at line {line}, column {column} is not a number: {content:?}")]
    BadCell { path: PathBuf, line: u64, column: usize, content: String },
    #[error("{path}: label column {index} out of range for {cols} columns")]
    BadLabelColumn { path: PathBuf, index: usize, cols: usize },
    #[error("{path}: rows have no attribute columns besides the label")]
    NoAttributes { path: PathBuf },
    #[error("{path}: only one class ({class:?}) present")]
    SingleClass { path: PathBuf, class: String },
    #[error("{path}: label {label:?} not in the known class mapping")]
    UnknownClass { path: PathBuf, label: String },
    #[error("attribute count mismatch between files: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("train fraction {0} must be strictly between 0 and 1")]
    BadFraction(f64),
    #[error("need at least {need} rows, have {have}")]
    TooSmall { need: usize, have: usize },
    #[error("class {class:?} has {count} members; stratified split needs at least 2")]
    ClassTooSmall { class: String, count: usize },
    #[error("split leaves the {side} side empty")]
    EmptySplit { side: &'static str },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelColumn {
    Index(usize),
    Last,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { label_column: LabelColumn::Last, has_header: true }
    }
}

/// Attribute matrix plus integer class labels and the label-name mapping.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub x: Mat,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// One-hot encodes every label into an `n x n_classes` matrix.
    pub fn one_hot_labels(&self) -> Mat {
        let mut y = Mat::zeros(self.n(), self.n_classes);
        for (i, &lab) in self.labels.iter().enumerate() {
            y.set(i, lab, 1.0);
        }
        y
    }

    /// New dataset holding the given rows, in the order given.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let mut x = Mat::zeros(indices.len(), self.d());
        let mut labels = Vec::with_capacity(indices.len());
        for (dst, &src) in indices.iter().enumerate() {
            x.row_mut(dst).copy_from_slice(self.x.row(src));
            labels.push(self.labels[src]);
        }
        LabeledDataset {
            x,
            labels,
            n_classes: self.n_classes,
            class_names: self.class_names.clone(),
        }
    }

    /// Replaces the attribute matrix, keeping labels and class mapping.
    pub fn with_attributes(&self, x: Mat) -> LabeledDataset {
        assert_eq!(x.rows(), self.n(), "row count changed");
        LabeledDataset {
            x,
            labels: self.labels.clone(),
            n_classes: self.n_classes,
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &lab in &self.labels {
            counts[lab] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<LabeledDataset, DatasetError> {
    let data = load_with_mapping(path, opts, &mut Vec::new())?;
    if data.n_classes < 2 {
        return Err(DatasetError::SingleClass {
            path: path.to_path_buf(),
            class: data.class_names.first().cloned().unwrap_or_default(),
        });
    }
    Ok(data)
}

/// Loads a file whose labels must already appear in `class_names`
/// (evaluation of held-out files against a trained model).
pub fn load_csv_mapped(
    path: &Path,
    opts: &CsvOptions,
    class_names: &[String],
) -> Result<LabeledDataset, DatasetError> {
    let mut names = class_names.to_vec();
    let before = names.len();
    let mut data = load_with_mapping(path, opts, &mut names)?;
    if names.len() > before {
        return Err(DatasetError::UnknownClass {
            path: path.to_path_buf(),
            label: names[before].clone(),
        });
    }
    data.n_classes = before;
    data.class_names = names;
    Ok(data)
}

/// Loads an already-divided train/test pair with a shared class mapping
/// (first appearance over train rows, then test rows).
pub fn load_pair(
    train_path: &Path,
    test_path: &Path,
    opts: &CsvOptions,
) -> Result<SplitDataset, DatasetError> {
    let mut names = Vec::new();
    let mut train = load_with_mapping(train_path, opts, &mut names)?;
    let mut test = load_with_mapping(test_path, opts, &mut names)?;
    if test.d() != train.d() {
        return Err(DatasetError::DimensionMismatch { expected: train.d(), got: test.d() });
    }
    if names.len() < 2 {
        return Err(DatasetError::SingleClass {
            path: train_path.to_path_buf(),
            class: names.first().cloned().unwrap_or_default(),
        });
    }
    train.n_classes = names.len();
    test.n_classes = names.len();
    train.class_names = names.clone();
    test.class_names = names;
    Ok(SplitDataset { train, test })
}

fn load_with_mapping(
    path: &Path,
    opts: &CsvOptions,
    class_names: &mut Vec<String>,
) -> Result<LabeledDataset, DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(source),
            other => panic!("unexpected csv open error: {other:?}"),
        })?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;

    for record in reader.records() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(source) => io_err(source),
                _ => unreachable!(),
            },
            other => panic!("unexpected csv parse error: {other:?}"),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let expected = match width {
            Some(w) => w,
            None => {
                let w = record.len();
                width = Some(w);
                w
            }
        };
        if record.len() != expected {
            return Err(DatasetError::RaggedRow {
                path: path.to_path_buf(),
                line,
                expected,
                got: record.len(),
            });
        }
        let label_idx = match opts.label_column {
            LabelColumn::Last => expected - 1,
            LabelColumn::Index(i) => {
                if i >= expected {
                    return Err(DatasetError::BadLabelColumn {
                        path: path.to_path_buf(),
                        index: i,
                        cols: expected,
                    });
                }
                i
            }
        };
        if expected < 2 {
            return Err(DatasetError::NoAttributes { path: path.to_path_buf() });
        }

        let mut row = Vec::with_capacity(expected - 1);
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                let name = cell.to_string();
                let class = match class_names.iter().position(|n| *n == name) {
                    Some(c) => c,
                    None => {
                        class_names.push(name);
                        class_names.len() - 1
                    }
                };
                labels.push(class);
            } else {
                let v: f64 = cell.parse().map_err(|_| DatasetError::BadCell {
                    path: path.to_path_buf(),
                    line,
                    column: j + 1,
                    content: cell.to_string(),
                })?;
                row.push(v);
            }
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(DatasetError::Empty { path: path.to_path_buf() });
    }
    Ok(LabeledDataset {
        x: Mat::from_rows(&rows),
        labels,
        n_classes: class_names.len(),
        class_names: class_names.clone(),
    })
}

pub fn one_hot(label: usize, n_classes: usize) -> Result<Vec<f64>, DatasetError> {
    if label >= n_classes {
        return Err(DatasetError::LabelOutOfRange { label, n_classes });
    }
    let mut v = vec![0.0; n_classes];
    v[label] = 1.0;
    Ok(v)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Seeded random train/test split. Stratified mode draws
/// `ceil(fraction * count)` members per class (the fractional remainder goes
/// to train), plain mode draws `round(fraction * n)` rows overall. Row order
/// within each side follows the source file.
pub fn split(
    data: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitDataset, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::BadFraction(train_fraction));
    }
    if data.n() < 2 {
        return Err(DatasetError::TooSmall { need: 2, have: data.n() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx: Vec<usize>;

    if stratified {
        let counts = data.class_counts();
        for (c, &count) in counts.iter().enumerate() {
            if count < 2 {
                return Err(DatasetError::ClassTooSmall {
                    class: data.class_names[c].clone(),
                    count,
                });
            }
        }
        train_idx = Vec::new();
        for c in 0..data.n_classes {
            let mut members: Vec<usize> = (0..data.n()).filter(|&i| data.labels[i] == c).collect();
            members.shuffle(&mut rng);
            let take = ceil_fraction(train_fraction, members.len());
            train_idx.extend_from_slice(&members[..take]);
        }
    } else {
        let mut all: Vec<usize> = (0..data.n()).collect();
        all.shuffle(&mut rng);
        let take = (train_fraction * data.n() as f64).round() as usize;
        train_idx = all[..take.min(data.n())].to_vec();
    }

    train_idx.sort_unstable();
    let mut in_train = vec![false; data.n()];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let test_idx: Vec<usize> = (0..data.n()).filter(|&i| !in_train[i]).collect();

    if train_idx.is_empty() {
        return Err(DatasetError::EmptySplit { side: "train" });
    }
    if test_idx.is_empty() {
        return Err(DatasetError::EmptySplit { side: "test" });
    }
    Ok(SplitDataset { train: data.select(&train_idx), test: data.select(&test_idx) })
}

/// `ceil(fraction * count)`, with the product rounded to 9 decimals first so
/// binary representation error cannot push an exact integer over the edge.
fn ceil_fraction(fraction: f64, count: usize) -> usize {
    let scaled = (fraction * count as f64 * 1e9).round() / 1e9;
    (scaled.ceil() as usize).min(count)
}

/// Per-class training-side sizes a stratified split will produce. These
/// depend only on the class counts, never on the seed.
pub fn stratified_train_counts(class_counts: &[usize], train_fraction: f64) -> Vec<usize> {
    class_counts.iter().map(|&c| ceil_fraction(train_fraction, c)).collect()
}

/// Per-column affine scaling fitted on training data: subtract the mean,
/// divide by the population standard deviation (constant columns divide by 1).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Mat) -> Result<Self, DatasetError> {
        let n = x.rows();
        if n < 2 {
            return Err(DatasetError::TooSmall { need: 2, have: n });
        }
        let d = x.cols();
        let mut means = vec![0.0; d];
        for i in 0..n {
            for (m, &v) in means.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in means.iter_mut() {
            *m /= n as f64;
        }
        let mut scales = vec![0.0; d];
        for i in 0..n {
            for (s, (&v, &m)) in scales.iter_mut().zip(x.row(i).iter().zip(&means)) {
                let dev = v - m;
                *s += dev * dev;
            }
        }
        for s in scales.iter_mut() {
            *s = (*s / n as f64).sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Ok(Standardizer { means, scales })
    }

    pub fn apply(&self, x: &Mat) -> Result<Mat, DatasetError> {
        if x.cols() != self.means.len() {
            return Err(DatasetError::DimensionMismatch {
                expected: self.means.len(),
                got: x.cols(),
            });
        }
        let mut out = Mat::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            for (j, ((&v, &m), &s)) in
                x.row(i).iter().zip(&self.means).zip(&self.scales).enumerate()
            {
                out.set(i, j, (v - m) / s);
            }
        }
        Ok(out)
    }
}
