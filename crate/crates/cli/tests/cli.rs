use std::fs;
use std::path::Path;
use std::process::Command;

fn darko(args: &[&str], cwd: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_darko")).args(args).current_dir(cwd).output().unwrap();
    assert!(out.status.success(), "darko {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    darko(&["simulate", "--env-template", "lab1", "--days", "1", "--seed", "9", "--out", "a.jsonl"], d);
    darko(&["simulate", "--env-template", "lab1", "--days", "1", "--seed", "9", "--out", "b.jsonl"], d);
    assert_eq!(fs::read(d.join("a.jsonl")).unwrap(), fs::read(d.join("b.jsonl")).unwrap());
    fs::write(d.join("run.toml"), "env_template = \"lab1\"\n[driver.estimator.monte_carlo]\nrollouts = 50\nseed = 0\n").unwrap();
    for out in ["r1", "r2"] {
        darko(&["run", "--stream", "a.jsonl", "--config", "run.toml", "--seed", "4", "--out", out], d);
    }
    let (a, b) = (files(&d.join("r1")), files(&d.join("r2")));
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["forecasts.jsonl", "ledger.csv", "mdp.jsonl", "regret.csv", "summary.json", "theta.csv"]);
    assert_eq!(a, b);
}

#[test]
fn eval_reads_only_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    darko(&["simulate", "--env-template", "home1", "--days", "1", "--detector", "stop", "--out", "s.jsonl"], d);
    darko(&["run", "--stream", "s.jsonl", "--env-template", "home1", "--feature-mode", "state-only", "--out", "run"], d);
    let shown = darko(&["eval", "--run", "run", "--stream", "s.jsonl", "--out", "eval"], d);
    assert!(shown.contains("darko"));
    let metrics = fs::read_to_string(d.join("eval/metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value\n"));
    assert!(metrics.contains("regret_within_bound,true"));
    let curve = fs::read_to_string(d.join("eval/curve.jsonl")).unwrap();
    assert_eq!(curve.lines().count(), 101);
    darko(&["regret", "--run", "run", "--out", "regret.csv"], d);
    let regret = fs::read_to_string(d.join("regret.csv")).unwrap();
    assert!(regret.lines().nth(1).unwrap().starts_with("run,1,"));
}

#[test]
fn sweep_writes_paired_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    darko(&["sweep", "--env-template", "lab1", "--days", "1", "--repeats", "2", "--noise-rate", "0.3,0.6", "--out", "sw"], d);
    let pairs = fs::read_to_string(d.join("sw/sweep_pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 1 + 2 * 2);
    let summary = fs::read_to_string(d.join("sw/sweep.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn missing_environment_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("s.jsonl"), "").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_darko")).args(["run", "--stream", "s.jsonl", "--out", "r"]).current_dir(tmp.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--env-template"));
}
