use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ccplan(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ccplan")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "ccplan {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn thresholds_csv() {
    let text = stdout(&ccplan(&["thresholds", "--beta", "0.05", "--format", "csv"]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 21);
    assert!(lines.contains(&"0.6,1000,0.359,0.573,359,573"));
    assert!(lines.contains(&"0.05,100,n/a,0.010,n/a,1"));
}

#[test]
fn calibrate_policies() {
    let text = stdout(&ccplan(&["calibrate", "--n", "100", "--eta", "0.1", "--beta", "0.05"]));
    assert!(text.contains("k = 4"), "{text}");
    let text = stdout(&ccplan(&[
        "calibrate", "--n", "100", "--eta", "0.05", "--beta", "0.05", "--policy", "rademacher",
    ]));
    assert!(text.contains("infeasible"), "{text}");
    let json = stdout(&ccplan(&[
        "calibrate", "--n", "1000", "--eta", "0.3", "--beta", "0.05", "--policy", "rademacher", "--format", "json",
    ]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["k"], 59);
}

#[test]
fn rejects_bad_input() {
    let out = Command::new(env!("CARGO_BIN_EXE_ccplan"))
        .args(["calibrate", "--n", "100", "--eta", "1.5", "--beta", "0.05"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_ccplan"))
        .args(["--jobs", "0", "thresholds"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn plan_from_toml() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("job.toml");
    fs::write(
        &cfg,
        "n_eval = 1000\n[planner]\nmax_iter = 10\neta = 0.1\nseed = 4\n",
    )
    .unwrap();
    let out = dir.path().join("plan.json");
    let text = stdout(&ccplan(&["plan", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert!(text.contains("evaluated violation probability"), "{text}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["environment"], "gaussian-center");
    assert!(v["trajectory"]["T"].as_f64().unwrap() > 0.0);
    let log = fs::read_to_string(dir.path().join("plan.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 11);
}

fn mpc_run(dir: &Path, jobs: &str) -> String {
    let cfg = dir.join("mpc.json");
    fs::write(&cfg, r#"{"max_steps": 6, "planner": {"max_iter": 3, "inject_waiting": true}}"#).unwrap();
    let out = dir.join(format!("run-{jobs}"));
    ccplan(&[
        "--jobs", jobs, "--seed", "2", "mpc", "--env", "env1", "--eta", "0.2", "--episodes", "2",
        "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert!(out.join("episode_0001.json").exists());
    fs::read_to_string(out.join("aggregate.csv")).unwrap()
}

#[test]
fn mpc_output_does_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let a = mpc_run(dir.path(), "1");
    let b = mpc_run(dir.path(), "2");
    assert_eq!(a, b);
    assert!(a.starts_with("eta,env,episode,duration,success,collided,min_distance\n"));
    assert_eq!(a.lines().count(), 3);
}
