#[path = "../../core/tests/common/fixtures.rs"]
mod fixtures;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fixtures::{failure_log, Fixture};
use lka_core::deviation::{predict_deviation, LinearFit};
use lka_core::dynamics::VehicleCapability;
use lka_core::geometry::{build_clothoid_profile, write_profile, TransitionSpec};
use lka_core::readiness::io::write_features_csv;
use lka_core::readiness::FeatureVector;
use lka_core::rules::min_transition_length;
use lka_core::telemetry::{write_log, TelemetryRecord};
use serde_json::Value;
use tempfile::TempDir;

fn lka(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lka")).args(args).env_remove("LKA_AUDIT_CONFIG").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn write_capability(dir: &Path) -> PathBuf {
    let p = dir.join("generic.json");
    fs::write(&p, serde_json::to_string(&VehicleCapability::default()).unwrap()).unwrap();
    p
}

/// Clothoid from a tangent to kappa 0.004, posted 25 m/s, `factor` times the
/// minimum transition length of the generic capability.
fn write_clothoid(dir: &Path, factor: f64) -> PathBuf {
    let cap = VehicleCapability::default();
    let ls = min_transition_length(&cap, 25.0, 0.004).unwrap();
    let p = build_clothoid_profile(&TransitionSpec::new(0.0, 0.004, ls * factor), 0.5, None, 25.0).unwrap();
    let path = dir.join(format!("clothoid_{factor}.csv"));
    let mut buf = Vec::new();
    write_profile(&p, &mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

fn write_records(dir: &Path, name: &str, log: &[TelemetryRecord]) -> PathBuf {
    let path = dir.join(name);
    let mut buf = Vec::new();
    write_log(log, &mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

/// Curves at several curvatures whose apex deviation follows `fit` exactly.
fn curve_log(fit: &LinearFit) -> Vec<TelemetryRecord> {
    let mut log = Vec::new();
    let mut t = 0.0;
    for k in [0.002, 0.004, 0.006, 0.008, 0.010, 0.012] {
        for i in 0..30 {
            let kappa = if (5..25).contains(&i) { k } else { 0.0 };
            let mut r = TelemetryRecord::nominal(t, 25.0).with_deviation(if kappa > 0.0 { predict_deviation(fit, kappa) } else { 0.0 });
            r.kappa = kappa;
            log.push(r);
            t += 0.1;
        }
    }
    log
}

#[test]
fn audit_compliant_clothoid_exits_zero() {
    let d = TempDir::new().unwrap();
    let cap = write_capability(d.path());
    let geo = write_clothoid(d.path(), 1.0);
    let out = d.path().join("out");
    let o = lka(&["audit", "--geometry", s(&geo), "--capability", s(&cap), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(out.join("audit_report.json"));
    assert_eq!(report["findings"].as_array().unwrap().len(), 0);
    let md = fs::read_to_string(out.join("audit_report.md")).unwrap();
    assert!(md.contains("R1 minimum radius") && md.contains("R4 advisory speed"));
    assert!(md.contains("208.3"), "{md}");
}

#[test]
fn audit_half_length_clothoid_exits_two() {
    let d = TempDir::new().unwrap();
    let cap = write_capability(d.path());
    let geo = write_clothoid(d.path(), 0.5);
    let out = d.path().join("out");
    let o = lka(&["audit", "--geometry", s(&geo), "--capability", s(&cap), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let report = read_json(out.join("audit_report.json"));
    assert_eq!(report["summary"]["R2"], 1);
    let r2: Vec<&Value> = report["findings"].as_array().unwrap().iter().filter(|f| f["rule"] == "R2").collect();
    assert_eq!(r2.len(), 1);
    assert_eq!(r2[0]["severity"], "violation");
    assert!((r2[0]["actual"].as_f64().unwrap() - 5.0).abs() < 1e-6);
}

#[test]
fn audit_input_errors_exit_one() {
    let d = TempDir::new().unwrap();
    let geo = write_clothoid(d.path(), 1.0);
    let missing = d.path().join("nope.json");
    let o = lka(&["audit", "--geometry", s(&geo), "--capability", s(&missing), "--out", s(d.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
    let o = lka(&["audit", "--geometry", s(&geo), "--out", s(d.path())]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&lka(&["audit", "--bogus"])), 1);
}

#[test]
fn config_from_env_and_flags_override() {
    let d = TempDir::new().unwrap();
    write_capability(d.path());
    write_clothoid(d.path(), 1.0);
    let cfg = d.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"out": "cfg_out", "capability": "generic.json", "formats": ["json"],
            "audit": {"geometry": "clothoid_1.csv", "speed_mps": 25.0}}"#,
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lka")).arg("audit").env("LKA_AUDIT_CONFIG", &cfg).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = d.path().join("cfg_out");
    assert!(out.join("audit_report.json").exists());
    assert!(!out.join("audit_report.md").exists());
    assert_eq!(read_json(out.join("audit_report.json"))["speed_used_mps"], 25.0);

    let o = Command::new(env!("CARGO_BIN_EXE_lka"))
        .args(["audit", "--speed", "40"])
        .env("LKA_AUDIT_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(read_json(out.join("audit_report.json"))["speed_used_mps"], 40.0);

    fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lka")).arg("audit").env("LKA_AUDIT_CONFIG", &cfg).output().unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn analyze_labels_control_failure() {
    let d = TempDir::new().unwrap();
    let log = write_records(d.path(), "control.csv", &failure_log(Fixture::Control, 3.0));
    let out = d.path().join("out");
    let o = lka(&["analyze", "--log", s(&log), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let diag = read_json(out.join("diagnoses.json"));
    let list = diag.as_array().unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(list[0]["category"], "control");
    assert!(list[0]["factors"].as_array().unwrap().iter().any(|f| f == "sharp_curve"));
    for f in ["episodes.json", "factor_tally.json", "factor_tally.csv", "deviation_scatter.csv", "deviation_scatter.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let svg = fs::read_to_string(out.join("deviation_scatter.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<circle"));
    assert!(read_json(out.join("deviation_fit.json"))["fit"].is_null());
}

#[test]
fn analyze_normal_log_has_no_failures() {
    let d = TempDir::new().unwrap();
    let log: Vec<TelemetryRecord> = (0..50).map(|i| TelemetryRecord::nominal(i as f64 * 0.1, 25.0)).collect();
    let path = write_records(d.path(), "normal.csv", &log);
    let out = d.path().join("out");
    let o = lka(&["analyze", "--log", s(&path), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(out.join("diagnoses.json")), serde_json::json!([]));
}

#[test]
fn analyze_corrupt_csv_exits_one() {
    let d = TempDir::new().unwrap();
    let path = d.path().join("bad.csv");
    fs::write(&path, "t_s,v_mps\n0.0,abc\n").unwrap();
    let o = lka(&["analyze", "--log", s(&path), "--out", s(d.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn curate_is_seeded() {
    let d = TempDir::new().unwrap();
    let mut log = Vec::new();
    for (n, kind) in [Fixture::Control, Fixture::Perception, Fixture::Planning].into_iter().enumerate() {
        for mut r in failure_log(kind, 3.0) {
            r.t += n as f64 * 10.0;
            log.push(r);
        }
    }
    let path = write_records(d.path(), "three.csv", &log);
    let run = |seed: &str, dir: &str| {
        let out = d.path().join(dir);
        let o = lka(&["curate", "--log", s(&path), "--out", s(&out), "--seed", seed, "--ratio", "0.5"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("curated.json")).unwrap()
    };
    let a = run("7", "a");
    assert_eq!(a, run("7", "b"));
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["failures"].as_array().unwrap().len(), 3);
    assert_eq!(v["normals"].as_array().unwrap().len(), 2);
}

#[test]
fn fit_recovers_generating_line() {
    let d = TempDir::new().unwrap();
    let path = write_records(d.path(), "curves.csv", &curve_log(&LinearFit::REFERENCE));
    let out = d.path().join("out");
    let o = lka(&["fit", "--log", s(&path), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit = &read_json(out.join("deviation_fit.json"))["fit"];
    assert!((fit["slope_m2"].as_f64().unwrap() + 8.327).abs() < 1e-6);
    assert!((fit["intercept_m"].as_f64().unwrap() - 0.214).abs() < 1e-6);
    assert!(fs::read_to_string(out.join("deviation_scatter.svg")).unwrap().contains("stroke=\"#d62728\""));

    let straight: Vec<TelemetryRecord> = (0..20).map(|i| TelemetryRecord::nominal(i as f64 * 0.1, 25.0)).collect();
    let path = write_records(d.path(), "straight.csv", &straight);
    assert_eq!(code(&lka(&["fit", "--log", s(&path), "--out", s(&out)])), 1);
}

#[test]
fn simulate_default_sweep_is_linear() {
    let d = TempDir::new().unwrap();
    let o = lka(&["simulate", "--out", s(d.path())]);
    assert_eq!(code(&o), 0);
    let v = read_json(d.path().join("sweep_summary.json"));
    assert!(v["fit"]["slope_m2"].as_f64().unwrap() < 0.0);
    assert!(v["fit"]["r_squared"].as_f64().unwrap() >= 0.9);
    assert!(d.path().join("sweep.svg").exists());
}

#[test]
fn simulate_straight_road_and_divergence() {
    let d = TempDir::new().unwrap();
    let o = lka(&["simulate", "--kappas", "0", "--out", s(d.path())]);
    assert_eq!(code(&o), 0);
    let v = read_json(d.path().join("sweep_summary.json"));
    assert_eq!(v["points"][0]["steady_state_deviation"], 0.0);

    let cfg = d.path().join("unstable.json");
    fs::write(&cfg, r#"{"simulate": {"sweep": {"kd_unit": -3.0, "tangent_m": 200.0, "kappas": [0.0, 0.01]}}}"#).unwrap();
    let out = d.path().join("unstable");
    let o = lka(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
    let v = read_json(out.join("sweep_summary.json"));
    assert!(v["points"].as_array().unwrap().iter().any(|p| p["error"].is_string()));
}

#[test]
fn simulate_trace_files() {
    let d = TempDir::new().unwrap();
    let o = lka(&["simulate", "--kappas", "0.004,0.008", "--trace", "--out", s(d.path())]);
    assert_eq!(code(&o), 0);
    let trace = fs::read_to_string(d.path().join("trace_01.csv")).unwrap();
    assert!(trace.starts_with("t_s,x_m,lateral_offset_m,torque_Nm,kappa_inv_m\n"));
}

#[test]
fn train_predict_round_trip() {
    let d = TempDir::new().unwrap();
    let out = d.path().join("model");
    let o = lka(&["train", "--n", "1500", "--trees", "30", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.json", "metrics.json", "confusion.csv", "partial_dependence.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(read_json(out.join("metrics.json"))["metrics"]["accuracy"].as_f64().unwrap() >= 0.9);

    let rows: Vec<FeatureVector> = [15.0, 20.0, 25.0].iter().map(|&v| FeatureVector::benign(0.0005, v)).collect();
    let features = d.path().join("benign.csv");
    let mut buf = Vec::new();
    write_features_csv(&rows, &mut buf).unwrap();
    fs::write(&features, buf).unwrap();
    let pred = d.path().join("pred");
    let model = out.join("model.json");
    let o = lka(&["predict", "--model", s(&model), "--features", s(&features), "--out", s(&pred)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(pred.join("predictions.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "row,class,p_normal,p_deviation,p_disengagement");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("normal")), "{csv}");

    let mut m = read_json(&model);
    m["format_version"] = serde_json::json!(99);
    let old = d.path().join("old.json");
    fs::write(&old, m.to_string()).unwrap();
    let o = lka(&["predict", "--model", s(&old), "--features", s(&features), "--out", s(&pred)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
}

#[test]
fn train_from_labeled_csv() {
    let d = TempDir::new().unwrap();
    let gen = d.path().join("gen");
    assert_eq!(code(&lka(&["train", "--n", "400", "--trees", "5", "--out", s(&gen), "--format", "csv"])), 0);
    let data = gen.join("training_data.csv");
    let out = d.path().join("csv_model");
    let o = lka(&["train", "--data", s(&data), "--trees", "10", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(out.join("metrics.json"));
    assert_eq!(m["n_train"].as_u64().unwrap() + m["n_test"].as_u64().unwrap(), 400);

    let bad = d.path().join("bad.csv");
    fs::write(&bad, "kappa_inv_m,speed_mps\n0.1,20\n").unwrap();
    assert_eq!(code(&lka(&["train", "--data", s(&bad), "--out", s(&out)])), 1);
}

#[test]
fn report_combines_outputs() {
    let d = TempDir::new().unwrap();
    let cap = write_capability(d.path());
    let geo = write_clothoid(d.path(), 0.5);
    let out = d.path().join("out");
    lka(&["audit", "--geometry", s(&geo), "--capability", s(&cap), "--out", s(&out)]);
    lka(&["simulate", "--out", s(&out)]);
    let o = lka(&[
        "report",
        "--input",
        s(&out.join("audit_report.json")),
        s(&out.join("sweep_summary.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("## Audit of clothoid") && md.contains("Simulated curvature sweep"));
    let stray = out.join("episodes.json");
    fs::write(&stray, "[]").unwrap();
    assert_eq!(code(&lka(&["report", "--input", s(&stray), "--out", s(&out)])), 1);
}

#[test]
fn format_filter_and_no_temp_files() {
    let d = TempDir::new().unwrap();
    let o = lka(&["simulate", "--format", "svg", "--out", s(d.path())]);
    assert_eq!(code(&o), 0);
    let names: Vec<String> = fs::read_dir(d.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names, vec!["sweep.svg".to_string()]);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let d = TempDir::new().unwrap();
    let log = write_records(d.path(), "control.csv", &failure_log(Fixture::Control, 3.0));
    let run = |dir: &str| {
        let out = d.path().join(dir);
        lka(&["analyze", "--log", s(&log), "--out", s(&out)]);
        lka(&["simulate", "--out", s(&out)]);
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let a = run("a");
    assert!(a.len() >= 9);
    assert_eq!(a, run("b"));
}
