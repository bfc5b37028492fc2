use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Two well-separated 2-D blobs, `rows_per_class` points each, written as a
/// headered CSV with the label in the last column.
pub fn write_blob_csv(dir: &Path, rows_per_class: usize) -> PathBuf {
    let path = dir.join("blobs.csv");
    let mut body = String::from("x,y,label\n");
    for i in 0..rows_per_class {
        let t = TAU * i as f64 / rows_per_class as f64;
        writeln!(body, "{},{},blue", 0.3 * t.sin(), 0.3 * t.cos()).unwrap();
        writeln!(body, "{},{},red", 3.0 + 0.3 * t.cos(), 3.0 + 0.3 * t.sin()).unwrap();
    }
    std::fs::write(&path, body).unwrap();
    path
}

/// Writes a small experiment config pointing at `csv`.
pub fn write_blob_config(dir: &Path, csv: &Path) -> PathBuf {
    let path = dir.join("blobs.toml");
    let body = format!(
        r#"[dataset]
path = "{csv}"

[split]
fraction = 0.7

[som]
rows = 2
cols = 2
max_epochs = 40
patience = 5

[lmnn]
k = 1
max_iters = 40

[experiment]
runs = 3
base_seed = 7
"#,
        csv = csv.display()
    );
    std::fs::write(&path, body).unwrap();
    path
}
