//! End-to-end runs of the `obg` binary: outputs, exit codes, determinism and schema conformance.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn obg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obg"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("OBG_THREADS", "2")
        .output()
        .expect("run obg")
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_valid(schema: &str, doc: &Value) {
    let s = read_json(&schema_dir().join(schema));
    let compiled = jsonschema::JSONSchema::compile(&s).expect("schema compiles");
    let msgs: Vec<String> = match compiled.validate(doc) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    assert!(msgs.is_empty(), "{schema}: {msgs:?}");
}

fn error_payload(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("error line");
    let v: Value = serde_json::from_str(line).expect("JSON error payload");
    assert_valid("error.schema.json", &v);
    v
}

#[test]
fn analyze_reports_cokernels_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = obg(dir.path(), &["--seed", "7", "analyze"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let report = read_json(&dir.path().join("analyze.json"));
    assert_valid("analyze.schema.json", &report);
    let conns = report["connections"].as_array().unwrap();
    assert_eq!(conns.len(), 6);
    let middle: Vec<&Value> = conns.iter().filter(|c| c["coker"] == 1).collect();
    assert_eq!(middle.len(), 2);
    for c in middle {
        assert_eq!(c["reduced_ker"], 0);
        assert!(c["adjoint_pairing"].as_f64().unwrap() < 1e-6);
    }
    for c in conns {
        let k = c["ker"].as_i64().unwrap() - c["coker"].as_i64().unwrap();
        assert_eq!(k, c["fredholm_index"].as_i64().unwrap());
    }
    let b = obg(dir.path(), &["--seed", "7", "analyze"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"system": {"family": "flat_torus_height", "params": {"R": 1.0, "r": 1.0}, "mollify_radius": 0.35, "blend_width": 0.1}}"#,
    )
    .unwrap();
    let o = obg(dir.path(), &["--config", cfg.to_str().unwrap(), "analyze"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_payload(&o)["exit_code"], 2);
    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(obg(dir.path(), &["--config", cfg.to_str().unwrap(), "analyze"]).status.code(), Some(2));
    assert_eq!(obg(dir.path(), &["glue0", "--triple", "front,middle,back"]).status.code(), Some(2));
}

#[test]
fn run_config_file_round_trips_through_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let doc = serde_json::json!({
        "system": {"family": "flat_torus_height", "params": {"R": 2.0, "r": 1.0}, "mollify_radius": 0.35, "blend_width": 0.1},
        "seed": 3,
        "homology": {"side": "t<0", "amplitudes": [1.0, -1.0]}
    });
    assert_valid("run_config.schema.json", &doc);
    assert_valid("system_config.schema.json", &doc["system"]);
    std::fs::write(&cfg, doc.to_string()).unwrap();
    let o = obg(dir.path(), &["--config", cfg.to_str().unwrap(), "homology"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let c = read_json(&dir.path().join("complex.json"));
    assert_eq!(c["side"], "t<0");
}

#[test]
fn glue0_full_pipeline_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = obg(dir.path(), &["glue0", "--triple", "front,right,front", "--R0", "24", "--full", "--sweep", "16:28:4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("verdict.json"));
    assert_valid("glue0_verdict.schema.json", &v);
    assert_eq!(v["verdict"]["gluable"], true);
    for key in ["zero_R0_minus", "zero_R0_minus_s00", "zero_R0_minus_s"] {
        assert!((v["verdict"][key].as_f64().unwrap() - 12.0).abs() < 0.5, "{key}");
    }
    assert_valid("diagnostics.schema.json", &read_json(&dir.path().join("diagnostics.json")));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "R0_minus,R0_plus,s00,s0,defect_left,defect_right,s");
    assert_eq!(lines.len(), 5);

    let o = obg(dir.path(), &["glue0", "--triple", "front,right,back", "--sweep", "16:28:4"]);
    assert_eq!(o.status.code(), Some(0));
    let v = read_json(&dir.path().join("verdict.json"));
    assert_eq!(v["verdict"]["gluable"], false);
    assert!(v["verdict"]["zero_R0_minus"].is_null());
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "R0_minus,R0_plus,s00,s0,defect_left,defect_right");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn gluet_on_both_sides() {
    let dir = tempfile::tempdir().unwrap();
    let o = obg(dir.path(), &["gluet", "--pair", "minus,right,front", "--panels", "-0.01"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("t_verdict.json"));
    assert_valid("t_verdict.schema.json", &v);
    assert_eq!(v["summary"]["found"], 12);
    assert!(v["summary"]["relative_error"].as_f64().unwrap() < 0.1);
    let csv = std::fs::read_to_string(dir.path().join("bifurcation.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,found,R0_measured,R0_predicted");
    let side = v["verdict"]["side"].as_str().unwrap();
    let wrong = if side == "t<0" { "t>0" } else { "t<0" };
    let o = obg(dir.path(), &["gluet", "--pair", "minus,right,front", "--side", wrong]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("bifurcation.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("false")));
}

#[test]
fn gluet_rejects_t_zero_and_nonlocal_support() {
    let dir = tempfile::tempdir().unwrap();
    let o = obg(dir.path(), &["gluet", "--t", "-0.01:0.01"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_payload(&o)["message"].as_str().unwrap().contains("t = 0"));
    let o = obg(dir.path(), &["gluet", "--radius", "1.0"]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(error_payload(&o)["error"], "locality");
}

#[test]
fn homology_on_both_sides_and_tampered() {
    let dir = tempfile::tempdir().unwrap();
    for side in ["t>0", "t<0"] {
        let o = obg(dir.path(), &["homology", "--side", side]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let c = read_json(&dir.path().join("complex.json"));
        assert_valid("complex.schema.json", &c);
        assert_eq!(c["homology"], serde_json::json!([1, 2, 1]));
        assert_eq!(c["direct"]["homology"], serde_json::json!([1, 2, 1]));
    }
    let o = obg(dir.path(), &["homology", "--tamper-verdict", "0"]);
    assert_eq!(o.status.code(), Some(5));
    assert_eq!(error_payload(&o)["error"], "homology_mismatch");
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_obg"))
        .arg("--out")
        .arg(dir.path())
        .arg("analyze")
        .env("OBG_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
