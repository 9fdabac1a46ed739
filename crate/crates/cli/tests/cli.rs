use std::fs;
use std::path::Path;
use std::process::Command;

fn rsoc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rsoc")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn linear(a: f64, process: &str) -> String {
    format!(
        r#"{{"problem": {{"model": "linear", "horizon": 1.0, "steps": 20, "a": [[{a}]], "b": [[1.0]],
             "q": [[1.0]], "r": [[0.1]], "qf": [[1.0]], "x0": [1.0]}},
            "noise": {{"process": {process}, "measurement": 0.1}},
            "experiment": {{"rollouts": 5, "sample_rollouts": 2}}}}"#
    )
}

#[test]
fn solve_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "lin.json", &linear(0.5, "0.1"));
    let out = tmp.path().join("run");
    let o = rsoc(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.json", "trajectory.csv", "gains.csv", "estimation_gains.csv", "law.json", "samples.csv", "summary.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(!out.join("forces.csv").exists());
    let gains = fs::read_to_string(out.join("gains.csv")).unwrap();
    assert_eq!(gains.lines().next().unwrap(), "k,t,frobenius_L,l_1,L_11");
    assert_eq!(gains.lines().count(), 21);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["termination"], "converged");
    assert_eq!(summary["diverged"], 0);

    // The resolved config is itself a valid config.
    let resolved = out.join("config.json");
    let again = tmp.path().join("again");
    let o = rsoc(&["solve", "--config", resolved.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("gains.csv")).unwrap(), fs::read(again.join("gains.csv")).unwrap());
}

#[test]
fn rollout_reports_risk_and_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "lin.json", &linear(0.5, "0.1"));
    let run = tmp.path().join("run");
    assert!(rsoc(&["solve", "--config", &cfg, "--out", run.to_str().unwrap()]).status.success());

    let o = rsoc(&["rollout", "--config", &cfg, "--law", run.to_str().unwrap(), "--samples", "20", "--seed", "3"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["risk"]["sample_count"], 20);
    let again = rsoc(&["rollout", "--config", &cfg, "--law", run.to_str().unwrap(), "--samples", "20", "--seed", "3"]);
    assert_eq!(o.stdout, again.stdout);

    let loud = write(tmp.path(), "loud.json", &linear(0.5, "1e30"));
    let o = rsoc(&["rollout", "--config", &loud, "--law", run.to_str().unwrap(), "--samples", "3", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn exit_codes_for_config_and_solver_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let bad = write(tmp.path(), "bad.json", r#"{"problem": {"model": "nope"}}"#);
    assert_eq!(rsoc(&["solve", "--config", &bad, "--out", out.to_str().unwrap()]).status.code(), Some(2));
    let missing = tmp.path().join("missing.json");
    assert_eq!(rsoc(&["solve", "--config", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(2));
    let exploding = write(tmp.path(), "boom.json", &linear(1e4, "0.1"));
    assert_eq!(rsoc(&["solve", "--config", &exploding, "--out", out.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn single_cell_grid_emits_one_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "vp.json",
        r#"{"problem": {"model": "viapoint", "horizon": 0.5, "steps": 50, "initial_q": [0.3, 1.5],
                        "control_weight": 0.05,
                        "viapoints": [{"time": 0.25, "target": [0.5, 0.5, 0.0, 0.0], "weight": 100.0}],
                        "goal": {"target": [0.3, 0.7, 0.0, 0.0], "weight": 10.0}},
            "noise": {"process": 1e-4, "measurement": 1e-6},
            "solver": {"sigma": 1.0},
            "experiment": {"rollouts": 4, "sample_rollouts": 2, "omega_sweep": {"levels": [1e-4], "fixed": 1e-6}}}"#,
    );
    let out = tmp.path().join("exp");
    let o = rsoc(&["experiment", "viapoint", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dirs: Vec<_> = fs::read_dir(&out).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    assert_eq!(dirs.len(), 1);
    assert_eq!(dirs[0].file_name(), "omega_0");
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["omega_sweep"].as_array().unwrap().len(), 1);
}

#[test]
fn selftest_passes() {
    let o = rsoc(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 6);
}
