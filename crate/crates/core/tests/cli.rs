use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
    out: PathBuf,
}

fn nodal(dir: &Path, command: &str, config: &str, extra: &[&str]) -> Run {
    let cfg = dir.join(format!("{command}.json"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("out_{command}"));
    let o = Command::new(env!("CARGO_BIN_EXE_nodal"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    Run {
        code: o.status.code().unwrap(),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
        out,
    }
}

fn config(potential: &str, lambda: f64, extra: &str) -> String {
    format!(
        r#"{{"grid": {{"bounds": [[0, 1]], "n": [63]}}, "potential": "{potential}", "lambda": {lambda}, "seed": 3{extra}}}"#
    )
}

fn envelope(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect()
}

#[test]
fn spectrum_writes_hashed_eigenpairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("power:4", 1.0, "");
    let r = nodal(dir.path(), "spectrum", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let hash = nodal_core::config::RunConfig::from_json(&cfg)
        .unwrap()
        .hash();
    let lines = csv_lines(&r.out.join("spectrum.csv"));
    assert_eq!(lines[0], format!("# config_hash={hash}"));
    assert_eq!(lines[1], "k,lambda,x,value");
    assert_eq!(lines.len(), 2 + 4 * 63);
    let json = envelope(&r.out.join("spectrum.json"));
    assert_eq!(json["config_hash"], hash);
    assert!(r.out.join("run.log").exists());
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        config("power:4", -1.0, ""),
        config("power:4", 1.0, r#", "unknown_key": 1"#),
        config("no_such_potential", 1.0, ""),
        config("power:4", 1.0, r#", "mu0": 1.5"#),
        "not json".to_string(),
    ] {
        let r = nodal(dir.path(), "solve", &bad, &[]);
        assert_eq!(r.code, 2, "config {bad}: {}", r.stderr);
        assert!(r.stderr.starts_with("error: "));
    }
    let r = nodal(
        dir.path(),
        "flow",
        &config("power:4", 1.0, ""),
        &["--start", "psi3"],
    );
    assert_eq!(r.code, 2, "{}", r.stderr);
}

#[test]
fn missing_linking_window_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let r = nodal(dir.path(), "solve", &config("power:4", 0.001, ""), &[]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("no linking window"));
    let scan = envelope(&r.out.join("frame_scan.json"));
    assert!(!scan["data"].as_array().unwrap().is_empty());
}

#[test]
fn failed_refinement_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let r = nodal(
        dir.path(),
        "solve",
        &config(
            "power:4",
            1.0,
            r#", "minimax": {"refine": {"max_iter": 1}}"#,
        ),
        &[],
    );
    assert_eq!(r.code, 4, "{}", r.stderr);
    let report = envelope(&r.out.join("minimax.json"));
    assert_eq!(report["data"]["converged"], false);
}

#[test]
fn oversized_cone_radius_exits_with_code_five() {
    let dir = tempfile::tempdir().unwrap();
    let r = nodal(
        dir.path(),
        "solve",
        &config("power:4", 100.0, r#", "mu0": 0.9"#),
        &[],
    );
    assert_eq!(r.code, 5, "{}", r.stderr);
    let inv = envelope(&r.out.join("invariance.json"));
    assert_eq!(inv["data"]["report"]["passed"], false);
}

#[test]
fn solve_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("power:4", 1.0, "");
    let a = nodal(dir.path(), "solve", &cfg, &[]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    let first = fs::read(a.out.join("solution.csv")).unwrap();
    let b = nodal(dir.path(), "solve", &cfg, &[]);
    assert_eq!(b.code, 0);
    assert_eq!(first, fs::read(b.out.join("solution.csv")).unwrap());
    let report = envelope(&a.out.join("minimax.json"));
    assert_eq!(report["data"]["sign_changes"], 1);
    let lines = csv_lines(&a.out.join("solution.csv"));
    assert_eq!(lines[1], "x,value");
    assert_eq!(lines.len(), 2 + 63);
}

#[test]
fn flow_writes_trajectory_schema() {
    let dir = tempfile::tempdir().unwrap();
    let r = nodal(
        dir.path(),
        "flow",
        &config("power:4", 1.0, ""),
        &["--start", "0.5*phi2"],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let lines = csv_lines(&r.out.join("trajectory.csv"));
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines[1], "t,J,m,d_plus,d_minus,label,dt");
    let summary = envelope(&r.out.join("flow.json"));
    assert_eq!(summary["data"]["start"], "0.5*phi2");
    assert_eq!(summary["data"]["verdict"]["passed"], true);
    assert!(r.stdout.contains("flow"));
}

#[test]
fn verify_flags_a_tampered_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let flow = nodal(
        dir.path(),
        "flow",
        &config("power:4", 1.0, ""),
        &["--start", "0.5*phi2"],
    );
    assert_eq!(flow.code, 0, "{}", flow.stderr);
    let traj_path = flow.out.join("trajectory.json");
    let clean = verify_with(dir.path(), &traj_path);
    assert_eq!(clean.code, 0, "{}{}", clean.stdout, clean.stderr);

    let mut traj = envelope(&traj_path);
    let states = traj["data"]["states"].as_array_mut().unwrap();
    let last = states.len() - 1;
    let e = states[last]["record"]["energy"].as_f64().unwrap();
    states[last]["record"]["energy"] = Value::from(e + 1.0);
    let tampered = dir.path().join("tampered.json");
    fs::write(&tampered, serde_json::to_string(&traj).unwrap()).unwrap();
    let r = verify_with(dir.path(), &tampered);
    assert_eq!(r.code, 1, "{}", r.stdout);
    assert!(r.stdout.contains("ps"), "{}", r.stdout);
    let ps = envelope(&r.out.join("ps.json"));
    assert_eq!(ps["data"]["inconsistent_states"], serde_json::json!([last]));
}

fn verify_with(dir: &Path, trajectory: &Path) -> Run {
    let extra = format!(
        r#", "verify": {{"trajectory": {}}}"#,
        serde_json::to_string(trajectory).unwrap()
    );
    nodal(dir, "verify", &config("power:4", 1.0, &extra), &[])
}

#[test]
fn quadratic_potential_fails_superlinearity_check() {
    let dir = tempfile::tempdir().unwrap();
    let r = nodal(dir.path(), "verify", &config("power:2", 1.0, ""), &[]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(r.stdout.contains("hypotheses"));
    let hyp = envelope(&r.out.join("hypotheses.json"));
    let checks = hyp["data"]["checks"].as_array().unwrap();
    let iv = checks.iter().find(|c| c["name"] == "iv").unwrap();
    assert_eq!(iv["passed"], false);
}
