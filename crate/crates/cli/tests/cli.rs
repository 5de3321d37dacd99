use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_obslab");

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn heat_config(k: usize, extra: &str) -> String {
    format!(
        r#"{{
  "seed": 5,
  "spec": {{"kind": "pure_power", "m": 1, "length": 3.141592653589793}},
  "K": {k},
  "T": 1.0,
  "sets": {{
    "omega": {{"kind": "intervals", "value": "0.6283185307179586-1.5707963267948966"}},
    "D": {{"kind": "product", "omega": "omega", "times": "0.5-1"}}
  }}{extra}
}}"#
    )
}

/// Parses `m e x` into `log10`, including values beyond `f64` range.
fn log10_of(field: &str) -> f64 {
    let (m, e) = field.trim().split_once('e').unwrap();
    m.parse::<f64>().unwrap().log10() + e.parse::<f64>().unwrap()
}

#[test]
fn simulate_single_mode_norm_decays_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &heat_config(3, r#", "simulate": {"initial": [1.0, 0.0, 0.0], "steps": 4}"#));
    let out = dir.path().join("o");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t, norm, a_1, a_2, a_3");
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.trim().parse().unwrap()).collect();
        assert!((cols[1] - (-cols[0]).exp()).abs() < 1e-13, "{line}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn observability_both_orders_constants_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &heat_config(4, r#", "observability": {"set": "D", "validation": 500, "fit_states": 10, "restarts": 6}"#),
    );
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&[
            "observability",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--method",
            "both",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(out.join("certificates.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.swap_remove(0)).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    // The set descriptor is quoted; N_obs and violations are the last three fields.
    let tail = |r: &str| -> Vec<String> { r.rsplitn(4, ',').map(|s| s.trim().to_string()).collect() };
    let (tel, emp) = (tail(rows[0]), tail(rows[1]));
    assert!(rows[0].starts_with("telescoping") && rows[1].starts_with("empirical"));
    assert_eq!(tel[1], "0");
    assert_eq!(emp[1], "0");
    assert!(log10_of(&emp[2]) <= log10_of(&tel[2]));
}

#[test]
fn seed_override_changes_random_draws() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &heat_config(3, ""));
    let read = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
        std::fs::read_to_string(out.join("trajectory.csv")).unwrap()
    };
    assert_ne!(read("1", "s1"), read("2", "s2"));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = run(&["frobnicate"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn invalid_config_exits_with_field_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &heat_config(65, ""));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K: must be in"));
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
  "seed": 1,
  "spec": {"kind": "coupled2", "length": 3.141592653589793, "truncation": 3},
  "K": 3,
  "T": 1.0,
  "sets": {"D": {"kind": "product", "omega": "0.5-1.5", "times": "0.5-1"}},
  "control": {"mode": "coupled", "set": "D"}
}"#;
    let cfg = write_config(dir.path(), body);
    let out = dir.path().join("o");
    let o = run(&["control", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("coupling hypothesis"));
}

#[test]
fn hum_control_writes_dump_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &heat_config(5, r#", "control": {"mode": "hum", "set": "D"}"#));
    let out = dir.path().join("o");
    let o = run(&["control", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("control_summary.json")).unwrap()).unwrap();
    let lambda = summary["lambda"].as_f64().unwrap();
    assert!(summary["residual"].as_f64().unwrap() <= 1e-3);
    let dump = std::fs::read_to_string(out.join("control.csv")).unwrap();
    assert!(dump.starts_with("x, t, f\n"));
    for line in dump.lines().skip(1) {
        let f: f64 = line.rsplit(',').next().unwrap().trim().parse().unwrap();
        assert!(f.abs() <= lambda * (1.0 + 1e-12));
    }
}
