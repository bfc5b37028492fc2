//! Acceptance gate: one test per shipped criterion, each emitting a single
//! `ACCEPTANCE c<N> <name>: PASS/FAIL` line (mirrored to the process stderr
//! so the line survives libtest capture).
//!
//! The dataset experiments run in strict-epoch mode so both arms of every
//! run train for exactly the configured epoch count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use som_dml::dataset::LabeledDataset;
use som_dml::harness::{
    run_experiment, ExperimentConfig, ExperimentReport, RunOptions, ARM_SOM, ARM_SOM_DML,
};
use som_dml::lmnn::{self, MahalanobisMetric, TargetNeighbors};
use som_dml::matrix::{sq_dist, Mat};
use som_dml::numerics::SymMatrix;
use som_dml::som::SomGrid;
use som_dml::whitening;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn load_config(name: &str) -> ExperimentConfig {
    let path = repo_path(&format!("configs/{name}.toml"));
    let mut config =
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("loading {}: {e}", path.display()));
    // config paths are written relative to the repository root
    config.dataset.path = repo_path(config.dataset.path.to_str().unwrap());
    config
}

fn strict() -> RunOptions {
    RunOptions { strict_epochs: true, ..RunOptions::default() }
}

type CachedReport = OnceLock<Result<ExperimentReport, String>>;

static WINE: CachedReport = OnceLock::new();
static IONOSPHERE: CachedReport = OnceLock::new();
static IRIS: CachedReport = OnceLock::new();
static DIGITS: CachedReport = OnceLock::new();

fn dataset_report(
    cache: &'static CachedReport,
    name: &str,
) -> &'static Result<ExperimentReport, String> {
    cache.get_or_init(|| run_experiment(&load_config(name), &strict()).map_err(|e| e.to_string()))
}

/// Prints the criterion verdict and fails the test on FAIL. The line is also
/// written straight to the process stderr, bypassing libtest's capture, so a
/// plain `cargo test` log shows every verdict.
fn criterion(number: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let line = format!("ACCEPTANCE c{number} {name}: {verdict} ({detail})");
    println!("{line}");
    {
        use std::io::Write;
        if let Ok(mut f) = std::fs::OpenOptions::new().append(true).open("/dev/stderr") {
            let _ = writeln!(f, "{line}");
        }
    }
    assert!(ok, "{line}");
}

fn arm_means(report: &ExperimentReport, arm: &str) -> (f64, f64) {
    let a = report.arm(arm).expect("arm present");
    (a.mean_train_error, a.mean_test_error)
}

#[test]
fn c01_wine_error_band_and_improvement() {
    match dataset_report(&WINE, "wine") {
        Ok(report) => {
            let (_, som_test) = arm_means(report, ARM_SOM);
            let (_, dml_test) = arm_means(report, ARM_SOM_DML);
            let in_band = (som_test - 5.31).abs() <= 4.0;
            let improved = dml_test < som_test;
            criterion(
                1,
                "wine_error_band_and_improvement",
                in_band && improved,
                &format!(
                    "som test {som_test:.2}% in 5.31±4.0: {in_band}; som+dml {dml_test:.2}% < som: {improved}; {} runs in {:.1}s",
                    report.arm(ARM_SOM).unwrap().runs.len(),
                    report.timings.total_seconds
                ),
            );
        }
        Err(e) => criterion(1, "wine_error_band_and_improvement", false, e),
    }
}

#[test]
fn c02_ionosphere_improvement() {
    match dataset_report(&IONOSPHERE, "ionosphere") {
        Ok(report) => {
            let (_, som_test) = arm_means(report, ARM_SOM);
            let (_, dml_test) = arm_means(report, ARM_SOM_DML);
            let ok = dml_test <= som_test - 3.0;
            criterion(
                2,
                "ionosphere_improvement",
                ok,
                &format!("som test {som_test:.2}%, som+dml {dml_test:.2}%, need ≥3pp gap"),
            );
        }
        Err(e) => criterion(
            2,
            "ionosphere_improvement",
            false,
            &format!("dataset unavailable, place the CSV at data/ionosphere.csv: {e}"),
        ),
    }
}

#[test]
fn c03_iris_band_and_train_direction() {
    match dataset_report(&IRIS, "iris") {
        Ok(report) => {
            let (som_train, som_test) = arm_means(report, ARM_SOM);
            let (dml_train, _) = arm_means(report, ARM_SOM_DML);
            let in_band = (som_test - 7.78).abs() <= 4.0;
            let train_dir = dml_train <= som_train;
            criterion(
                3,
                "iris_band_and_train_direction",
                in_band && train_dir,
                &format!(
                    "som test {som_test:.2}% in 7.78±4.0: {in_band}; som+dml train {dml_train:.2}% ≤ som train {som_train:.2}%: {train_dir}"
                ),
            );
        }
        Err(e) => criterion(3, "iris_band_and_train_direction", false, e),
    }
}

#[test]
fn c04_digits_improvement() {
    match dataset_report(&DIGITS, "digits") {
        Ok(report) => {
            let (_, som_test) = arm_means(report, ARM_SOM);
            let (_, dml_test) = arm_means(report, ARM_SOM_DML);
            let ok = dml_test < som_test;
            criterion(
                4,
                "digits_improvement",
                ok,
                &format!(
                    "som test {som_test:.2}%, som+dml {dml_test:.2}% over {} runs in {:.0}s",
                    report.arm(ARM_SOM).unwrap().runs.len(),
                    report.timings.total_seconds
                ),
            );
        }
        Err(e) => criterion(4, "digits_improvement", false, e),
    }
}

#[test]
fn c05_whitening_distance_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(501);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.gen_range(1..=20);
        let mut l = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                l.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        let metric = MahalanobisMetric::from_sym(SymMatrix::new(l.matmul_transpose(&l)).unwrap());
        let transform = whitening::decompose(&metric, whitening::DEFAULT_EPS).unwrap();
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let want = lmnn::mahalanobis_dist(&metric, &a, &b).unwrap();
        let got = sq_dist(&transform.apply_row(&a).unwrap(), &transform.apply_row(&b).unwrap());
        worst = worst.max((got - want).abs() / (1.0 + want));
    }
    criterion(
        5,
        "whitening_distance_equivalence",
        worst <= 1e-8,
        &format!("1000 instances, worst relative gap {worst:.2e} ≤ 1e-8"),
    );
}

/// Loss of an arbitrary (not necessarily symmetric) matrix, by direct triple
/// enumeration over ordered target pairs and differently-labelled points.
fn brute_loss(m: &Mat, data: &LabeledDataset, tn: &TargetNeighbors, c: f64) -> f64 {
    let d = data.d();
    let q = |i: usize, j: usize| {
        let a = data.x.row(i);
        let b = data.x.row(j);
        let mut s = 0.0;
        for p in 0..d {
            for r in 0..d {
                s += (a[p] - b[p]) * m.get(p, r) * (a[r] - b[r]);
            }
        }
        s
    };
    let mut total = 0.0;
    for i in 0..data.n() {
        for &j in &tn.pairs[i] {
            total += (1.0 - c) * q(i, j);
            for l in 0..data.n() {
                if data.labels[l] != data.labels[i] {
                    total += c * (1.0 + q(i, j) - q(i, l)).max(0.0);
                }
            }
        }
    }
    total
}

fn random_small_instance(rng: &mut ChaCha8Rng) -> (LabeledDataset, MahalanobisMetric) {
    let n = rng.gen_range(4..=8);
    let d = rng.gen_range(1..=3);
    let mut x = Mat::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            x.set(i, j, rng.gen_range(-2.0..2.0));
        }
    }
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let data =
        LabeledDataset { x, labels, n_classes: 2, class_names: vec!["a".into(), "b".into()] };
    let scale = rng.gen_range(0.05..1.5);
    let mut l = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            l.set(i, j, scale * rng.gen_range(-1.0..1.0));
        }
    }
    let metric = MahalanobisMetric::from_sym(SymMatrix::new(l.matmul_transpose(&l)).unwrap());
    (data, metric)
}

/// Smallest |1 + D(i,j) − D(i,l)| over all triplets: distance from a hinge kink.
fn min_margin_gap(metric: &MahalanobisMetric, data: &LabeledDataset, tn: &TargetNeighbors) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..data.n() {
        for &j in &tn.pairs[i] {
            let dij = lmnn::mahalanobis_dist(metric, data.x.row(i), data.x.row(j)).unwrap();
            for l in 0..data.n() {
                if data.labels[l] != data.labels[i] {
                    let dil = lmnn::mahalanobis_dist(metric, data.x.row(i), data.x.row(l)).unwrap();
                    gap = gap.min((1.0 + dij - dil).abs());
                }
            }
        }
    }
    gap
}

#[test]
fn c06_lmnn_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let c = 0.5;
    let mut losses_checked = 0usize;
    let mut gradients_checked = 0usize;
    let mut worst_loss_gap: f64 = 0.0;
    let mut worst_grad_gap: f64 = 0.0;

    let mut attempts = 0usize;
    while (losses_checked < 200 || gradients_checked < 200) && attempts < 2000 {
        attempts += 1;
        let (data, metric) = random_small_instance(&mut rng);
        let tn = lmnn::find_target_neighbors(&data, 1).unwrap();

        if losses_checked < 200 {
            let (got, _) = lmnn::loss(&metric, &data, &tn, c).unwrap();
            let want = brute_loss(metric.matrix().as_mat(), &data, &tn, c);
            worst_loss_gap = worst_loss_gap.max((got - want).abs() / (1.0 + want.abs()));
            losses_checked += 1;
        }

        if gradients_checked < 200 && min_margin_gap(&metric, &data, &tn) > 1e-3 {
            let g = lmnn::gradient(&metric, &data, &tn, c).unwrap();
            let h = 1e-6;
            let d = data.d();
            for a in 0..d {
                for b in 0..d {
                    let mut plus = metric.matrix().as_mat().clone();
                    plus.set(a, b, plus.get(a, b) + h);
                    let mut minus = metric.matrix().as_mat().clone();
                    minus.set(a, b, minus.get(a, b) - h);
                    let fd = (brute_loss(&plus, &data, &tn, c) - brute_loss(&minus, &data, &tn, c))
                        / (2.0 * h);
                    worst_grad_gap =
                        worst_grad_gap.max((g.get(a, b) - fd).abs() / (1.0 + fd.abs()));
                }
            }
            gradients_checked += 1;
        }
    }

    let ok = losses_checked == 200
        && gradients_checked == 200
        && worst_loss_gap <= 1e-10
        && worst_grad_gap <= 1e-4;
    criterion(
        6,
        "lmnn_oracle_equivalence",
        ok,
        &format!(
            "{losses_checked} losses (worst gap {worst_loss_gap:.2e} ≤ 1e-10), {gradients_checked} gradients at smooth points (worst gap {worst_grad_gap:.2e} ≤ 1e-4)"
        ),
    );
}

#[test]
fn c07_solver_invariants_on_fitted_datasets() {
    let mut covered = Vec::new();
    let mut missing = Vec::new();
    let mut ok = true;
    let mut detail = String::new();

    for (name, cache) in
        [("wine", &WINE), ("ionosphere", &IONOSPHERE), ("iris", &IRIS), ("digits", &DIGITS)]
    {
        match dataset_report(cache, name) {
            Ok(report) => {
                covered.push(name);
                for fit in &report.lmnn_fits {
                    let mut prev = fit.initial_loss;
                    for (i, rec) in fit.trace.iter().enumerate() {
                        if rec.min_eigenvalue < -1e-8 {
                            ok = false;
                            detail = format!("{name} iter {i}: min eig {}", rec.min_eigenvalue);
                        }
                        if rec.loss > prev {
                            ok = false;
                            detail = format!("{name} iter {i}: loss rose {prev} -> {}", rec.loss);
                        }
                        prev = rec.loss;
                    }
                }
            }
            Err(_) => missing.push(name),
        }
    }

    if ok {
        detail = format!(
            "PSD floor ≥ -1e-8 and non-increasing loss on {}{}",
            covered.join("/"),
            if missing.is_empty() {
                String::new()
            } else {
                format!("; {} unavailable (covered by its own criterion)", missing.join("/"))
            }
        );
    }
    // the availability of each dataset is judged by criteria 1-4; this
    // criterion asserts the solver invariants on every fit that ran
    criterion(7, "solver_invariants", ok && !covered.is_empty(), &detail);
}

fn oracle_bmu(grid: &SomGrid, x: &[f64], y: Option<&[f64]>) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for i in 0..grid.neurons() {
        let mut dist = sq_dist(x, grid.attribute_parts().row(i));
        if let Some(y) = y {
            dist += sq_dist(y, grid.class_parts().row(i));
        }
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    best
}

#[test]
fn c08_bmu_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let mut checked = 0usize;
    let mut tie_cases = 0usize;
    let mut ok = true;
    let mut detail = String::new();

    for case in 0..1000 {
        let rows = rng.gen_range(1..=6);
        let cols = rng.gen_range(1..=6);
        let d = rng.gen_range(1..=5);
        let classes = rng.gen_range(2..=4);
        let neurons = rows * cols;
        let mut a = Mat::zeros(neurons, d);
        let mut c = Mat::zeros(neurons, classes);
        for i in 0..neurons {
            for j in 0..d {
                a.set(i, j, rng.gen_range(-1.0..1.0));
            }
            for j in 0..classes {
                c.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }

        // every fifth case plants an exact tie: a duplicated neuron pair with
        // the sample sitting on their shared weights; the lower index must win
        let planted: Option<(usize, usize)> = if case % 5 == 0 && neurons >= 2 {
            let lo = rng.gen_range(0..neurons - 1);
            let hi = rng.gen_range(lo + 1..neurons);
            for j in 0..d {
                let v = a.get(lo, j);
                a.set(hi, j, v);
            }
            for j in 0..classes {
                let v = c.get(lo, j);
                c.set(hi, j, v);
            }
            Some((lo, hi))
        } else {
            None
        };

        let grid = SomGrid::from_parts(rows, cols, a, c).unwrap();
        let (x, y): (Vec<f64>, Vec<f64>) = match planted {
            Some((lo, _)) => {
                (grid.attribute_parts().row(lo).to_vec(), grid.class_parts().row(lo).to_vec())
            }
            None => (
                (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..classes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ),
        };

        let (test_bmu, _) = grid.bmu(&x);
        let (train_bmu, _) = grid.bmu_train(&x, &y);
        if test_bmu != oracle_bmu(&grid, &x, None) || train_bmu != oracle_bmu(&grid, &x, Some(&y)) {
            ok = false;
            detail = format!("case {case}: disagreement with oracle");
            break;
        }
        if let Some((lo, _)) = planted {
            tie_cases += 1;
            if test_bmu != lo || train_bmu != lo {
                ok = false;
                detail = format!("case {case}: tie resolved to {test_bmu}, expected {lo}");
                break;
            }
        }
        checked += 1;
    }

    if ok {
        detail = format!("{checked} instances agree, {tie_cases} planted ties resolve row-major");
    }
    criterion(8, "bmu_oracle", ok, &detail);
}

#[test]
fn c09_wine_report_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("wine1.json");
    let out2 = dir.path().join("wine2.json");
    let bin = env!("CARGO_BIN_EXE_som-dml");
    let root = repo_path("");

    let run = |out: &Path| {
        let status = std::process::Command::new(bin)
            .current_dir(&root)
            .args([
                "run",
                "--config",
                "configs/wine.toml",
                "--out",
                out.to_str().unwrap(),
                "--format",
                "json",
                "--strict-epochs",
            ])
            .output()
            .expect("spawn CLI");
        assert!(status.status.success(), "CLI failed: {}", String::from_utf8_lossy(&status.stderr));
    };
    run(&out1);
    run(&out2);

    let a = std::fs::read(&out1).unwrap();
    let b = std::fs::read(&out2).unwrap();
    criterion(
        9,
        "deterministic_report",
        a == b,
        &format!("two single-threaded runs, {} bytes each, identical: {}", a.len(), a == b),
    );
}

#[test]
fn c10_identity_metric_null_test() {
    let mut config = load_config("wine");
    config.experiment.runs = 30;
    let options =
        RunOptions { strict_epochs: true, identity_metric: true, ..RunOptions::default() };
    match run_experiment(&config, &options) {
        Ok(report) => {
            let som = report.arm(ARM_SOM).unwrap();
            let dml = report.arm(ARM_SOM_DML).unwrap();
            let diffs: Vec<f64> =
                som.runs.iter().zip(&dml.runs).map(|(a, b)| b.test_error - a.test_error).collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            criterion(
                10,
                "identity_metric_null_test",
                mean.abs() <= 1.0,
                &format!(
                    "paired test-error difference mean {mean:+.4}pp over {} runs",
                    diffs.len()
                ),
            );
        }
        Err(e) => criterion(10, "identity_metric_null_test", false, &e.to_string()),
    }
}
