use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rtheta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtheta"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn stdout_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().expect("summary line");
    serde_json::from_str(line).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a CSV artifact, skipping the provenance comment.
fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn plan_writes_protocol_and_gravity_start() {
    let tmp = TempDir::new().unwrap();
    let out = rtheta(tmp.path(), &["plan", "--out", "plan"]);
    assert!(out.status.success());
    let summary = stdout_json(&out);
    assert_eq!(summary["t_f"], 4.0);
    let rows = csv_rows(&tmp.path().join("plan/trajectory.csv"));
    assert_eq!(rows.len(), 4001);
    assert!((rows[0][5] - 196.0).abs() < 1e-10);
    assert_eq!(rows[0][6], 0.0);
    let doc = read_json(&tmp.path().join("plan/protocol.json"));
    assert_eq!(doc["schema"], "protocol-v1");
    assert_eq!(doc["metadata"]["provenance"]["config_hash"], summary["config_hash"]);
}

#[test]
fn min_tf_finds_the_seventh_order_limit() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"protocol": {"kind": "sta", "order": "seventh"}}"#);
    let out = rtheta(tmp.path(), &["min-tf", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let t_f = stdout_json(&out)["t_f"].as_f64().unwrap();
    assert!((t_f - 2.535).abs() < 0.05, "t_f = {t_f}");
}

#[test]
fn invalid_config_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"params": {"m": -20, "g": 9.8, "b1": 100, "b2": 50}}"#);
    let out = rtheta(tmp.path(), &["plan", "--config", cfg.to_str().unwrap(), "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn angles_require_unit_tags() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"transfer": {"theta0": 0, "thetaf": {"value": 45, "unit": "deg"}, "r0": 1, "rf": 4}}"#,
    );
    let out = rtheta(tmp.path(), &["plan", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn degree_and_radian_tags_agree() {
    let tmp = TempDir::new().unwrap();
    let deg = write_config(
        tmp.path(),
        "deg.json",
        r#"{"transfer": {"theta0": {"value": 0, "unit": "deg"}, "thetaf": {"value": 30, "unit": "deg"}, "r0": 1, "rf": 3}}"#,
    );
    let rad = write_config(
        tmp.path(),
        "rad.json",
        &format!(
            r#"{{"transfer": {{"theta0": {{"value": 0, "unit": "rad"}}, "thetaf": {{"value": {}, "unit": "rad"}}, "r0": 1, "rf": 3}}}}"#,
            30f64.to_radians()
        ),
    );
    let a = rtheta(tmp.path(), &["run", "--config", deg.to_str().unwrap(), "--out", "a"]);
    let b = rtheta(tmp.path(), &["run", "--config", rad.to_str().unwrap(), "--out", "b"]);
    assert_eq!(stdout_json(&a)["summary"], stdout_json(&b)["summary"]);
}

#[test]
fn run_reports_rest_energy_for_zero_length_hold() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"transfer": {"theta0": {"value": 45, "unit": "deg"}, "thetaf": {"value": 45, "unit": "deg"}, "r0": 4, "rf": 4},
            "protocol": {"kind": "hold"}}"#,
    );
    let out = rtheta(tmp.path(), &["run", "--config", cfg.to_str().unwrap(), "--out", "r"]);
    assert!(out.status.success());
    let e_f = read_json(&tmp.path().join("r/summary.json"))["E_f"].as_f64().unwrap();
    assert!((e_f - 554.372).abs() < 1e-3, "E_f = {e_f}");
}

#[test]
fn nominal_run_of_a_planned_protocol_is_quiet() {
    let tmp = TempDir::new().unwrap();
    assert!(rtheta(tmp.path(), &["plan", "--out", "p"]).status.success());
    let cfg = write_config(tmp.path(), "c.json", r#"{"protocol": {"kind": "file", "path": "p/protocol.json"}}"#);
    let out = rtheta(tmp.path(), &["run", "--config", cfg.to_str().unwrap(), "--out", "r"]);
    assert!(out.status.success());
    let summary = read_json(&tmp.path().join("r/summary.json"));
    assert!(summary["residual_kinetic"].as_f64().unwrap() < 1e-6);
    assert_eq!(
        csv_rows(&tmp.path().join("p/trajectory.csv")),
        csv_rows(&tmp.path().join("r/trajectory.csv"))
    );
}

#[test]
fn missing_protocol_file_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"protocol": {"kind": "file", "path": "absent.json"}}"#);
    let out = rtheta(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn aborted_run_exits_three_with_flagged_partial_record() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"start_offset": {"d_theta": {"value": 0, "unit": "rad"}, "d_r": -0.95}}"#,
    );
    let out = rtheta(tmp.path(), &["run", "--config", cfg.to_str().unwrap(), "--out", "r"]);
    assert_eq!(out.status.code(), Some(3));
    let text = fs::read_to_string(tmp.path().join("r/trajectory.csv")).unwrap();
    assert!(text.lines().next().unwrap().contains("partial: aborted at t ="));
    assert!(read_json(&tmp.path().join("r/summary.json"))["aborted_at"].is_number());
}

#[test]
fn infeasible_bounds_are_a_planner_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"protocol": {"kind": "sta", "order": "seventh"}, "bounds": {"tau_max": 100, "f_max": 150}}"#,
    );
    let out = rtheta(tmp.path(), &["plan", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_are_bit_identical_and_thread_independent() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"protocol": {"kind": "sta", "order": "seventh", "t_f": 2.535},
            "robustness": {"kind": "measurement_noise", "n_trials": 100}}"#,
    );
    let c = cfg.to_str().unwrap();
    assert!(rtheta(tmp.path(), &["robustness", "--config", c, "--out", "a", "--threads", "1"]).status.success());
    assert!(rtheta(tmp.path(), &["robustness", "--config", c, "--out", "b", "--threads", "3"]).status.success());
    for name in ["report.json", "report.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(name)).unwrap(),
            fs::read(tmp.path().join("b").join(name)).unwrap()
        );
    }
    let out = rtheta(tmp.path(), &["robustness", "--config", c, "--out", "c", "--seed", "9"]);
    assert_ne!(
        fs::read(tmp.path().join("a/report.csv")).unwrap(),
        fs::read(tmp.path().join("c/report.csv")).unwrap()
    );
    let mre = stdout_json(&out)["report"]["MRE"].as_f64().unwrap();
    assert!(mre > 0.0 && mre < 0.05);
}

#[test]
fn every_artifact_carries_provenance() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"protocol": {"kind": "sta", "order": "seventh", "t_f": 2.535},
            "start_offset": {"d_theta": {"value": 0.1, "unit": "deg"}, "d_r": -0.01},
            "correction": {"kind": "fixed", "t_i": 0.507, "c1": 2, "c2": 10, "c3": 0.02535, "c4": 50, "c5": 0.12675,
                           "mode": "literal_hold"}}"#,
    );
    let out = rtheta(tmp.path(), &["correct", "--config", cfg.to_str().unwrap(), "--out", "k"]);
    assert!(out.status.success());
    let hash = stdout_json(&out)["config_hash"].as_str().unwrap().to_owned();
    assert_eq!(hash.len(), 64);
    for entry in fs::read_dir(tmp.path().join("k")).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        if path.extension().unwrap() == "csv" {
            assert!(text.lines().next().unwrap().contains(&hash), "{}", path.display());
        } else {
            assert_eq!(read_json(&path)["provenance"]["config_hash"], hash.as_str());
        }
    }
    let sidecar = read_json(&tmp.path().join("k/correction.json"));
    for key in ["t_i", "e_meas", "t1_theta", "t1_r", "t2_theta", "t2_r", "factors"] {
        assert!(!sidecar[key].is_null(), "{key}");
    }
    let summary = read_json(&tmp.path().join("k/summary.json"));
    let (before, after) = (summary["RE_uncorrected"].as_f64().unwrap(), summary["RE_corrected"].as_f64().unwrap());
    assert!(after < before / 4.0);
}

#[test]
fn pid_writes_extended_columns() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"protocol": {"kind": "sta", "order": "seventh", "t_f": 2.535},
            "measurement_noise": {"theta": {"value": 0.05, "unit": "deg"}, "r": 0.005}}"#,
    );
    let out = rtheta(tmp.path(), &["pid", "--config", cfg.to_str().unwrap(), "--out", "p"]);
    assert!(out.status.success());
    let text = fs::read_to_string(tmp.path().join("p/pid.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().ends_with("tau_cmd_preclip,f_cmd_preclip,e_theta,e_r"));
    let rows = csv_rows(&tmp.path().join("p/pid.csv"));
    assert!(rows.iter().all(|r| r[5].abs() <= 600.0 && r[6].abs() <= 150.0));
}

#[test]
fn pid_needs_a_reference_trajectory() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"protocol": {"kind": "hold"}}"#);
    let out = rtheta(tmp.path(), &["pid", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reproduce_protocol_waveforms() {
    let tmp = TempDir::new().unwrap();
    let out = rtheta(tmp.path(), &["reproduce", "fig2", "--out", "f2"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{text}");
    for label in ["sta_quintic", "sta_seventh", "constraint_limited", "time_optimal"] {
        assert!(tmp.path().join(format!("f2/{label}.csv")).exists());
        assert!(tmp.path().join(format!("f2/{label}.protocol.json")).exists());
    }
    let summary = read_json(&tmp.path().join("f2/summary.json"));
    assert_eq!(summary["headlines"].as_array().unwrap().len(), 4);
}

#[test]
fn reproduce_damping_maps() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"scan": {"counts": [5, 5]}}"#);
    let out = rtheta(tmp.path(), &["reproduce", "fig6", "--config", cfg.to_str().unwrap(), "--out", "f6"]);
    assert!(out.status.success());
    let summary = read_json(&tmp.path().join("f6/summary.json"));
    assert_eq!(summary["headlines"][0]["verdict"], "PASS");
    assert_eq!(csv_rows(&tmp.path().join("f6/scan_matched.csv")).len(), 25);
    assert_eq!(csv_rows(&tmp.path().join("f6/scan_mismatched.csv")).len(), 25);
}
