//! Behaviour of the `spear` binary: exit codes, error lines, overrides.

use std::process::{Command, Output};

fn spear(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spear")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn bad_config_exits_with_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train":{"epochs":"many"}}"#).unwrap();
    let out = spear(&["--config", cfg.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap(), "train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error[config]:"), "{err}");
    assert!(err.contains("train.epochs"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn missing_input_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let missing = dir.path().join("nope.csv");
    std::fs::write(&cfg, serde_json::json!({ "data": { "series_csv": missing } }).to_string()).unwrap();
    let out = spear(&["--config", cfg.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap(), "label"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error[data]:"));
}

#[test]
fn zero_threads_is_rejected() {
    let out = spear(&["--threads", "0", "synth"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_honours_output_dir_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"data":{"synth":{"n_series":10}}}"#).unwrap();
    let run = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = spear(&[
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--output-dir",
            out_dir.to_str().unwrap(),
            "synth",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read(out_dir.join("series.csv")).unwrap()
    };
    assert_eq!(run("5", "a"), run("5", "b"));
    assert_ne!(run("5", "a"), run("6", "c"));
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a").join("config.resolved.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["seed"], 5);
}

#[test]
fn eval_without_checkpoint_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = spear(&["--output-dir", dir.path().to_str().unwrap(), "eval"]);
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error["), "{}", stderr(&out));
}
