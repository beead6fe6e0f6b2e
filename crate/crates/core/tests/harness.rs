use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[medium]
n_cells = 10
cell_points = 64

[fiber]
k = 0.2
pairs = [2]

[grids]
fine_points_per_cell = 64
t_final = 0.2
macro_intervals = 200

[slices]
t_star = 0.1
x_star = 0.3

[dispersion]
k_points = 11
bands = 3

[modes]
count = 4
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("experiment.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_twoscale"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> String {
    fs::read_to_string(dir.join("out/manifest.txt")).unwrap()
}

fn assert_tagged_csv(path: &Path) {
    let text = fs::read_to_string(path).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# config="), "{} starts with {first:?}", path.display());
}

#[test]
fn dispersion_writes_tagged_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SMALL, &["dispersion"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("out/dispersion.csv");
    assert_tagged_csv(&csv);
    // header line, column line, 11 fibers
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 13);
    assert!(manifest(dir.path()).contains("dispersion.csv"));
}

#[test]
fn modes_writes_eigenpairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SMALL, &["modes"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_tagged_csv(&dir.path().join("out/eigenvalues.csv"));
    assert_tagged_csv(&dir.path().join("out/eigenmodes.csv"));
}

#[test]
fn validate_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SMALL, &["validate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["space_slice.csv", "time_slice.csv", "initial_envelopes.csv"] {
        assert_tagged_csv(&dir.path().join("out").join(name));
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    let space = report["space_error"].as_f64().unwrap();
    assert!(space.is_finite() && space < 0.5, "space error {space}");
    assert!(report["config_hash"].as_str().unwrap().len() == 64);
    let m = manifest(dir.path());
    assert!(m.contains("space_error") && m.contains("report.json"));
}

#[test]
fn sweep_runs_on_an_admissible_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{SMALL}\n[sweep]\nn_cells = [4, 8]\n").replace("k = 0.2", "k = 0.25");
    let out = run(dir.path(), &config, &["sweep-epsilon"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("out/sweep_epsilon.csv");
    assert_tagged_csv(&csv);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 4);
}

#[test]
fn sweep_rejects_a_drifting_phase() {
    let dir = tempfile::tempdir().unwrap();
    // k = 0.25 gives l = 0 at N = 4 and l = 1/4 at N = 5
    let config = format!("{SMALL}\n[sweep]\nn_cells = [4, 5]\n").replace("k = 0.2", "k = 0.25");
    let out = run(dir.path(), &config, &["sweep-epsilon"]);
    assert!(!out.status.success());
}

#[test]
fn bad_configs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = run(dir.path(), &format!("{SMALL}\n[output]\ncolour = true\n"), &["validate"]);
    assert!(!unknown.status.success());
    let invalid = run(dir.path(), &SMALL.replace("k = 0.2", "k = 0.7"), &["dispersion"]);
    assert!(!invalid.status.success());
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("error"));
}
