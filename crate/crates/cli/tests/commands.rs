use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const CANONICAL: &str = r#"{"sg_costs":[10,30],"sg_bounds":[[0,30],[0,40]],
 "flex_costs":[40,100,5],"flex_bounds":[[0,10],[0,30],[0,40]],"flex_direction":[1,1,-1],
 "wind_capacity":28,"load_range":[40,60]}"#;

fn mploss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mploss")).args(args).output().unwrap()
}

const SYNTHETIC: &str = r#"{"synthetic": {"n_train": 200, "n_test": 50}}"#;

fn config(dir: &Path, data: &str) -> PathBuf {
    let path = dir.join("run.json");
    let text = format!(
        r#"{{"spec": {CANONICAL},
            "train": {{"epochs": 2, "batch_size": 64}},
            "model": {{"hidden": [8]}},
            "data": {data}}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(args: &[&str]) {
    let out = mploss(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_single_line_error(out: &Output, kind: &str) {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error: {kind}: ")), "{err}");
}

#[test]
fn derive_reports_region_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SYNTHETIC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["derive", "--config", s(&cfg), "--out", s(&a)]);
    run_ok(&["derive", "--config", s(&cfg), "--out", s(&b)]);
    let report = json(&a.join("report.json"));
    assert_eq!(report["k_d"], 2);
    assert_eq!(report["k_r"], 3);
    assert_eq!(report["day_ahead_validation"]["n_samples"], 10_000);
    assert!(report["day_ahead_validation"]["failures"].as_array().unwrap().is_empty());
    assert_eq!(report["dispatch_check"]["uncovered"], 0);
    for f in ["loss.json", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_config_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mploss(&["derive", "--config", "/nonexistent/run.json", "--out", s(dir.path())]);
    assert_single_line_error(&out, "Io");
}

#[test]
fn missing_spec_file_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"spec": "no_such_spec.json"}"#).unwrap();
    let out = mploss(&["derive", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_single_line_error(&out, "Io");
}

#[test]
fn degenerate_spec_aborts_with_witness_unless_perturbed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let spec = CANONICAL.replace("[10,30]", "[10,10]");
    fs::write(&cfg, format!(r#"{{"spec": {spec}}}"#)).unwrap();
    let out = mploss(&["derive", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_single_line_error(&out, "DegenerateAtPoint");
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta = ["));

    fs::write(&cfg, format!(r#"{{"spec": {spec}, "perturbation": {{"magnitude": 1e-5, "seed": 0}}}}"#)).unwrap();
    run_ok(&["derive", "--config", s(&cfg), "--out", s(dir.path())]);
}

#[test]
fn slice_canonical_has_three_segments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SYNTHETIC);
    let out = dir.path().join("slice");
    // 15 points puts ŷ on a step-2 grid that contains ŷ = y = 10.
    run_ok(&["slice", "--config", s(&cfg), "--out", s(&out), "--l", "50", "--y", "10", "--points", "15"]);
    let bp = json(&out.join("breakpoints.json"));
    assert_eq!(bp["segments"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(out.join("slice.csv")).unwrap();
    let min = csv
        .lines()
        .skip(1)
        .map(|r| r.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .min_by(|a, b| a[2].total_cmp(&b[2]))
        .unwrap();
    assert_eq!(min[0], 0.0);
}

#[test]
fn slice_with_two_points_emits_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SYNTHETIC);
    run_ok(&["slice", "--config", s(&cfg), "--out", s(dir.path()), "--l", "50", "--y", "10", "--points", "2"]);
    let csv = fs::read_to_string(dir.path().join("slice.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows, ["10,0,950", "-18,28,1420"]);
}

#[test]
fn slice_out_of_range_load_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SYNTHETIC);
    let out = mploss(&["slice", "--config", s(&cfg), "--out", s(dir.path()), "--l", "80", "--y", "10"]);
    assert_single_line_error(&out, "ParameterOutOfDomain");
}

#[test]
fn train_metrics_and_mode_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SYNTHETIC);
    let mut rmse = Vec::new();
    for mode in ["value", "diffopt"] {
        let out = dir.path().join(mode);
        run_ok(&["train", "--config", s(&cfg), "--out", s(&out), "--mode", mode, "--seed", "7"]);
        let m = json(&out.join("metrics.json"));
        for k in ["rmse", "ams", "wall_time", "epochs", "seed", "mode"] {
            assert!(m.get(k).is_some(), "missing {k}");
        }
        assert_eq!(m["seed"], 7);
        assert_eq!(m["mode"], mode);
        rmse.push(m["rmse"].as_f64().unwrap());
    }
    assert!((rmse[0] - rmse[1]).abs() <= 1e-6);
}

#[test]
fn zero_epochs_reports_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        format!(r#"{{"spec": {CANONICAL}, "train": {{"epochs": 0}}, "model": {{"hidden": [4]}},
            "data": {{"synthetic": {{"n_train": 20, "n_test": 10}}}}}}"#),
    )
    .unwrap();
    run_ok(&["train", "--config", s(&cfg), "--out", s(dir.path()), "--mode", "quality"]);
    let m = json(&dir.path().join("metrics.json"));
    assert_eq!(m["epochs"], 0);
    assert!(m["loss_trace"].as_array().unwrap().is_empty());
}

#[test]
fn unknown_mode_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SYNTHETIC);
    let out = mploss(&["train", "--config", s(&cfg), "--out", s(dir.path()), "--mode", "bogus"]);
    assert_single_line_error(&out, "UnknownMode");
}

#[test]
fn stale_loss_file_is_a_spec_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SYNTHETIC);
    run_ok(&["derive", "--config", s(&cfg), "--out", s(dir.path())]);
    let other = dir.path().join("other.json");
    let spec = CANONICAL.replace("[10,30]", "[10,31]");
    fs::write(&other, format!(r#"{{"spec": {spec}, "loss": "loss.json"}}"#)).unwrap();
    let out = mploss(&["train", "--config", s(&other), "--out", s(dir.path()), "--mode", "value"]);
    assert_single_line_error(&out, "SpecMismatch");
}

#[test]
fn evaluate_is_repeatable_and_checks_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SYNTHETIC);
    let trained = dir.path().join("t");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&trained), "--mode", "quality"]);
    let ckpt = trained.join("model.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["evaluate", "--config", s(&cfg), "--out", s(&a), "--checkpoint", s(&ckpt)]);
    run_ok(&["evaluate", "--config", s(&cfg), "--out", s(&b), "--checkpoint", s(&ckpt)]);
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());

    let small = dir.path().join("small.json");
    let spec = CANONICAL.replace("\"wind_capacity\":28", "\"wind_capacity\":20");
    fs::write(&small, format!(r#"{{"spec": {spec}}}"#)).unwrap();
    let out = mploss(&["evaluate", "--config", s(&small), "--out", s(&a), "--checkpoint", s(&ckpt)]);
    assert_single_line_error(&out, "CapacityMismatch");
}

#[test]
fn gen_data_then_train_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SYNTHETIC);
    let data = dir.path().join("data");
    run_ok(&["gen-data", "--config", s(&cfg), "--out", s(&data)]);
    let header = fs::read_to_string(data.join("train.csv")).unwrap();
    assert!(header.starts_with("timestamp,ws10,wd10,ws100,wd100,load_kw,wind_kw"));
    let csv_cfg = config(
        dir.path(),
        r#"{"train": "data/train.csv", "test": "data/test.csv"}"#,
    );
    run_ok(&["train", "--config", s(&csv_cfg), "--out", s(&dir.path().join("t")), "--mode", "quality"]);
}

#[test]
fn schema_violation_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.csv"),
        "timestamp,ws10,wd10,ws100,wd100,load_kw,wind_kw\n2022-01-01T00:00:00,5,180,7,185,50,-1\n",
    )
    .unwrap();
    let cfg = config(dir.path(), r#"{"train": "bad.csv", "test": "bad.csv"}"#);
    let out = mploss(&["train", "--config", s(&cfg), "--out", s(dir.path()), "--mode", "quality"]);
    assert_single_line_error(&out, "SchemaViolation");
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
