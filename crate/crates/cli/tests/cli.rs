use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dccda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dccda"))
        .args(args)
        .env("DCCDA_WORKERS", "2")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("config.json");
    let out = dir.join("out");
    fs::write(
        &path,
        format!(
            r#"{{"name": "cli", "env": {{"kind": "coordination-bandit"}},
                "train": {{"iterations": 4, "episodes_per_iteration": 4, "eval_every": 8,
                           "eval_episodes": 8, "final_eval_episodes": 8}},
                "output_dir": {out:?}{extra}}}"#
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_exit_codes() {
    let ok = dccda(&["verify", "--batch", "6", "--seed", "2"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("consistency"));

    let bad = dccda(&["verify", "--batch", "6", "--action-only", "--json"]);
    assert_eq!(bad.status.code(), Some(1));
    let parsed: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(parsed["reports"][0]["pass"], false);

    assert_eq!(dccda(&["verify", "--batch", "0"]).status.code(), Some(2));
}

#[test]
fn train_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), r#", "methods": ["dccda", "dccda-ob-kl"], "seeds": 2"#);
    let run = dccda(&["train", "--config", &config, "--seed", "5"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let out = tmp.path().join("out");
    assert!(out.join("dccda-ob-kl").join("seed_6.csv").is_file());

    let rep = dccda(&["report", out.to_str().unwrap()]);
    assert!(rep.status.success());
    let text = String::from_utf8_lossy(&rep.stdout);
    assert!(text.contains("cli/dccda ") && text.contains("cli/dccda-ob-kl"));
    assert_eq!(
        String::from_utf8_lossy(&run.stdout),
        text,
        "report reproduces the training summary"
    );
}

#[test]
fn sweep_writes_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), r#", "alphas": [0.5, 1.0], "betas": [0.0, 0.1], "seeds": 3"#);
    let run = dccda(&["--sequential", "sweep", "--config", &config]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = fs::read_to_string(tmp.path().join("out").join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("alpha,beta,seed,final_eval_rate,grad_norm_std"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), r#", "unknown_key": 1"#);
    let run = dccda(&["train", "--config", &config]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("error"));
    assert_eq!(dccda(&["report", tmp.path().to_str().unwrap()]).status.code(), Some(2));
    assert!(!dccda(&["train"]).status.success());
}
