//! End-to-end runs of the `witten` binary on the bundled fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn spec(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(format!("{name}.toml"))
}

fn witten(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_witten")).args(args).output().expect("binary runs")
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn validate_writes_the_ratio_table_and_exits_zero() {
    let out = tempfile::tempdir().unwrap();
    let s = spec("tilted_double_well");
    let o = witten(&["validate", "--spec", s.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.path(), "validate.csv");
    assert!(csv.starts_with("# manifest "));
    let hs: Vec<&str> = csv.lines().filter(|l| l.starts_with("ratio,")).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(hs, ["0.2", "0.15", "0.1", "0.05"]);
    assert!(csv.lines().any(|l| l.starts_with("exponent,")));
}

#[test]
fn classify_reports_the_twisted_torus() {
    let s = spec("twisted_torus");
    let out = tempfile::tempdir().unwrap();
    let o = witten(&["classify", "--spec", s.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("NotLocallySeparating"), "{text}");
    assert!(text.contains("NonOrientableNormalLine"));
}

#[test]
fn usage_errors_are_nonzero() {
    assert_eq!(witten(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(witten(&["check"]).status.code(), Some(2));
}

#[test]
fn missing_prerequisites_are_hard_errors() {
    let s = spec("harmonic");
    let out = tempfile::tempdir().unwrap();
    let o = witten(&["quasimode", "--spec", s.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("quasimode"));
    let t = spec("twisted_torus");
    let o = witten(&["predict", "--spec", t.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn violated_tolerance_gives_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(spec("tilted_double_well")).unwrap().replace("max_error = 0.18", "max_error = 1e-6");
    let path = dir.path().join("tight.toml");
    std::fs::write(&path, text).unwrap();
    let o = witten(&["validate", "--spec", path.to_str().unwrap(), "--h", "0.1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tolerance violated"));
}

#[test]
fn all_matches_the_pipeline_run_command_by_command() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(spec("tilted_double_well")).unwrap().replace("paths = 2000", "paths = 200");
    let path = dir.path().join("short.toml");
    std::fs::write(&path, text).unwrap();
    let common = ["--spec", path.to_str().unwrap(), "--h", "0.2,0.15,0.1", "--seed", "9"];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let o = witten(&[&["all"][..], &common, &["--out", a.path().to_str().unwrap()]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for c in ["check", "classify", "label", "predict", "solve", "quasimode", "validate", "simulate"] {
        witten(&[&[c][..], &common, &["--out", b.path().to_str().unwrap()]].concat());
    }
    let files = ["labeling.txt", "predictions.csv", "spectrum.csv", "interaction.csv", "validate.csv", "exit_times.csv"];
    let hash = read(a.path(), files[0]).lines().next().unwrap().to_string();
    for f in files {
        let x = read(a.path(), f);
        assert_eq!(x, read(b.path(), f), "{f} differs");
        assert_eq!(x.lines().next().unwrap(), hash, "{f} manifest");
    }
}
