use std::fs;

use majority_tree_cli::{exit_code, parse_config, run_experiment};

fn csv_rows(path: &std::path::Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).skip(1).map(String::from).collect()
}

#[test]
fn theta_writes_49_grid_rows_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let c = parse_config("kind=theta\nseed=42\nreplicas=1000\nhorizon=1\nradius=6").unwrap();
    let r = run_experiment(&c, dir.path());
    assert_eq!(exit_code(&r), 0, "{r:?}");
    assert_eq!(csv_rows(&dir.path().join("theta.csv")).len(), 49);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed_manifest"]["master_seed"], 42);
    assert_eq!(m["kind"], "theta");
    assert!(m["version"].is_string());
}

#[test]
fn commutation_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let c = parse_config("kind=commutation\nseed=7\nreplicas=100\nradius=5\nhorizon=2\np=0.5").unwrap();
    let r = run_experiment(&c, dir.path()).unwrap();
    assert_eq!(r.status.code(), 0);
    assert_eq!(r.summary["violations"], 0);
    assert_eq!(csv_rows(&dir.path().join("commutation.csv")).len(), 100);
}

#[test]
fn empty_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let c = parse_config("kind=simulate\nradius=0\nhorizon=0").unwrap();
    let r = run_experiment(&c, dir.path());
    assert_eq!(exit_code(&r), 0);
    let rows = csv_rows(&dir.path().join("simulate.csv"));
    assert_eq!(rows.len(), 1);
}

#[test]
fn outputs_embed_manifest_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let c = parse_config("kind=simulate\nseed=5\nradius=3\nhorizon=2\np=0.4").unwrap();
    run_experiment(&c, dir.path()).unwrap();
    let first = fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
    let stamp = first.lines().next().unwrap();
    assert!(stamp.contains("version=") && stamp.contains("\"master_seed\":5"), "{stamp}");
}

#[test]
fn reruns_are_byte_identical() {
    let configs = [
        "kind=simulate\nseed=11\nradius=5\nhorizon=4",
        "kind=trace\nseed=3\nreplicas=5\nradius=6\nhorizon=4",
        "kind=resample\nseed=3\nreplicas=5\nradius=6\nhorizon=4\nresample_clock=true",
        "kind=neverflip\nseed=3\nreplicas=1000\nradius=4\ntimes=2,4",
    ];
    for text in configs {
        let c = parse_config(text).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run_experiment(&c, a.path()).unwrap();
        run_experiment(&c, b.path()).unwrap();
        for f in ra.files.iter().filter(|f| f.extension().unwrap() == "csv") {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{text}");
        }
    }
}

#[test]
fn operational_error_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // fewer than the minimum batch size
    let c = parse_config("kind=neverflip\nreplicas=10").unwrap();
    assert_eq!(exit_code(&run_experiment(&c, dir.path())), 1);
}

#[test]
fn violation_status_is_two() {
    use majority_tree_cli::{Outcome, Status};
    let o = Outcome { status: Status::Violation, files: vec![], summary: Default::default() };
    assert_eq!(exit_code(&Ok(o)), 2);
}
