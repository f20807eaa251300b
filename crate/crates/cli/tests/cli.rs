use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qbsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbsde")).args(args).env("QBSDE_THREADS", "1").output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn results(dir: &Path) -> Value {
    let text = std::fs::read_to_string(dir.join("results.json")).unwrap();
    serde_json::from_str::<Value>(&text).unwrap()["body"].clone()
}

const LOG: &str = r#"{
    "command": "maximize",
    "model": {"d": 1, "m": [[0.3]], "lambda": [0.8888888888888888], "T": 1.0},
    "utility": {"kind": "log", "x": 2.0}
}"#;

#[test]
fn log_merton_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "log.json", LOG);
    let out = tmp.path().join("out");
    let o = qbsde(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = results(&out);
    let sharpe = 0.08f64 / 0.3;
    let exact = 2f64.ln() + 0.5 * sharpe * sharpe;
    assert!((r["V0"].as_f64().unwrap() - exact).abs() < 1e-10);
    assert!((r["strategy_t0"][0].as_f64().unwrap() - 0.08 / 0.09).abs() < 1e-12);
    assert_eq!(r["admissibility"]["pass"], true);
}

#[test]
fn every_artifact_carries_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "log.json", LOG);
    let out = tmp.path().join("out");
    assert_eq!(qbsde(&["run", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let resolved: Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.resolved.json")).unwrap()).unwrap();
    let hash = resolved["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    // Defaults are echoed.
    assert_eq!(resolved["body"]["numerics"]["n_steps"], 400);
    assert_eq!(resolved["body"]["numerics"]["n_paths"], 100_000);
    assert_eq!(resolved["body"]["numerics"]["seed"], 1);
    for entry in std::fs::read_dir(&out).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        if path.extension().unwrap() == "csv" {
            assert_eq!(text.lines().next().unwrap(), format!("# config_hash={hash}"));
        } else {
            let v: Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["config_hash"], hash.as_str());
        }
    }
    for name in ["results.json", "solution.csv", "strategy.csv", "config.resolved.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}

#[test]
fn negative_alpha_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", &LOG.replace(r#""kind": "log""#, r#""kind": "exponential", "alpha": -2"#));
    for cmd in ["run", "validate"] {
        let o = qbsde(&[cmd, &cfg]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains("utility.alpha"));
    }
}

#[test]
fn validate_accepts_good_configs_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "log.json", LOG);
    let o = qbsde(&["validate", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn relative_output_directory_follows_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let text = LOG.replace(r#""command""#, r#""output": {"directory": "results/a", "formats": ["json"]}, "command""#);
    let cfg = write_config(tmp.path(), "log.json", &text);
    assert_eq!(qbsde(&["run", &cfg]).status.code(), Some(0));
    let out = tmp.path().join("results/a");
    assert!(out.join("results.json").exists());
    assert!(!out.join("solution.csv").exists());
}

fn convergence_rows(text: &str) -> Vec<(usize, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            (cells[0].parse().unwrap(), cells[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn convergence_halves_in_the_closed_form_case() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "exp.json",
        r#"{"command": "maximize",
            "model": {"d": 1, "m": [[0.4]], "lambda": [0.5], "T": 1.0},
            "utility": {"kind": "exponential", "alpha": 1.0,
                        "B": {"kind": "tanh", "weights": [1.0], "amplitude": 0.5}, "x": 0.0}}"#,
    );
    let out = tmp.path().join("out");
    let o = qbsde(&["converge", &cfg, "--N", "50,100,200,400", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(text.starts_with("# config_hash="));
    let body: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert!(body.starts_with("N,Y0,error_vs_closed_form"));
    let rows = convergence_rows(&body);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![50, 100, 200, 400]);
    for w in rows.windows(2) {
        let ratio = w[0].1 / w[1].1;
        assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn convergence_of_zero_driver_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "zero.json",
        r#"{"command": "solve",
            "model": {"d": 1, "m": [[1.0]], "lambda": [0.0], "T": 1.0},
            "generator": {"terminal": {"kind": "constant", "value": 0.7}}}"#,
    );
    let out = tmp.path().join("out");
    let o = qbsde(&["converge", &cfg, "--N", "50,100,200,400", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(convergence_rows(&text).iter().all(|r| r.1 == 0.0), "{text}");
}

#[test]
fn misordered_step_list_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "log.json", LOG);
    for list in ["100,50", "50,50", "0,10", "a,b"] {
        let o = qbsde(&["converge", &cfg, "--N", list]);
        assert_eq!(o.status.code(), Some(2), "{list}");
    }
}

#[test]
fn threads_variable_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "log.json", LOG);
    let o = Command::new(env!("CARGO_BIN_EXE_qbsde")).args(["validate", &cfg]).env("QBSDE_THREADS", "0").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_subset_writes_only_selected_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "verify.json",
        r#"{"command": "verify", "numerics": {"n_steps": 100},
            "verify": {"theorems": ["prop1_bounds", "prop2_appendix_bound"]}}"#,
    );
    let out = tmp.path().join("out");
    let o = qbsde(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let r = results(&out);
    assert_eq!(r["theorems"].as_array().unwrap().len(), 2);
    assert!(out.join("verify_prop1_bounds.json").exists());
    assert!(out.join("verify_prop2_appendix_bound.json").exists());
    assert!(!out.join("verify_thm2_uniqueness.json").exists());
}

#[test]
fn regression_backend_solve() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "reg.json",
        r#"{"command": "solve",
            "model": {"d": 2, "m": [[0.2, 0.0], [0.05, 0.3]], "lambda": [1.0, 0.5], "T": 1.0},
            "utility": {"kind": "log", "x": 1.0},
            "numerics": {"backend": "regression", "n_steps": 5, "n_paths": 2000, "basis_degree": 2, "n_store": 3}}"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(qbsde(&["run", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let r = results(&out);
    let ml2 = 0.2f64.powi(2) + (0.05 + 0.15f64).powi(2);
    assert!((r["Y0"].as_f64().unwrap() - 0.5 * ml2).abs() < 1e-12);
    let csv = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "step,t,node,w0,w1,y,z0,z1");
    // Three stored paths at each of six times.
    assert_eq!(csv.lines().count(), 2 + 6 * 3);
}
