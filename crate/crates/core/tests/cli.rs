//! Runs the `mvan` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvan::report::read_metrics_json;

fn mvan(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mvan"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("MVAN_OUTPUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("MVAN_OUTPUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn selfcheck_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvan(&["selfcheck", "-o", dir.path().to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = fs::read_to_string(dir.path().join("selfcheck/selfcheck.txt")).unwrap();
    assert!(report.lines().count() >= 8);
    assert!(!report.contains("FAIL"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "n_runs = 2\nbogus_key = 1\n").unwrap();
    assert_eq!(code(&mvan(&["evaluate", "-c", bad.to_str().unwrap()], None)), 2);

    fs::write(&bad, "[data]\ndir = \"x\"\n[synthetic]\n").unwrap();
    assert_eq!(code(&mvan(&["evaluate", "-c", bad.to_str().unwrap()], None)), 2);

    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&mvan(&["evaluate", "-o", out], None)), 2);
    assert_eq!(code(&mvan(&["frobnicate", "-o", out], None)), 2);
    assert_eq!(code(&mvan(&["config", "--set", "model.trainer.dropout=1.5"], None)), 2);
    assert_eq!(code(&mvan(&["config", "-c", "/nonexistent/config.toml"], None)), 2);
}

#[test]
fn runtime_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let missing = dir.path().join("nowhere");
    let set = format!("data.dir={:?}", missing.display().to_string());
    let o = mvan(&["prepare", "-o", out, "--set", &set], None);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("from_env");
    let o = mvan(
        &["config", "-c", configs().join("synthetic.toml").to_str().unwrap()],
        Some(&env_dir),
    );
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains(&format!("output_dir = {:?}", env_dir.display().to_string())));

    let flag_dir = dir.path().join("from_flag");
    let o = mvan(
        &[
            "config",
            "-c",
            configs().join("synthetic.toml").to_str().unwrap(),
            "-o",
            flag_dir.to_str().unwrap(),
        ],
        Some(&env_dir),
    );
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains(&format!("output_dir = {:?}", flag_dir.display().to_string())));
}

/// With no signal in either view, test accuracy stays inside the 95% band of
/// a fair coin over 120 test examples.
#[test]
fn null_signal_evaluates_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let synthetic = configs().join("synthetic.toml");
    let o = mvan(
        &[
            "gen-synthetic",
            "-c",
            synthetic.to_str().unwrap(),
            "-o",
            out,
            "--set",
            "synthetic.text_signal_strength=0",
            "--set",
            "synthetic.graph_signal_strength=0",
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let data = dir.path().join("data");
    for f in ["tweets.jsonl", "retweets.jsonl", "users.jsonl", "embeddings.txt"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let cfg = fs::read_to_string(&synthetic).unwrap();
    let start = cfg.find("[synthetic]").unwrap();
    let end = cfg[start..].find("[model]").unwrap() + start;
    let cfg = format!(
        "{}[data]\ndir = {:?}\n\n{}",
        &cfg[..start],
        data.display().to_string(),
        &cfg[end..]
    )
    .replace("n_runs = 10", "n_runs = 1")
    .replace(
        "[model]\n",
        &format!(
            "[model]\nembeddings_path = {:?}\n",
            data.join("embeddings.txt").display().to_string()
        ),
    );
    let cfg_path = dir.path().join("null.toml");
    fs::write(&cfg_path, cfg).unwrap();
    let o = mvan(&["evaluate", "-c", cfg_path.to_str().unwrap(), "-o", out], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let eval = dir.path().join("evaluate");
    assert!(!eval.join("aggregate.csv").exists());
    let m = read_metrics_json(&eval.join("metrics_run00.json")).unwrap();
    assert_eq!(m.n_examples, 120);
    assert!((0.40..=0.60).contains(&m.accuracy), "accuracy {}", m.accuracy);
}
