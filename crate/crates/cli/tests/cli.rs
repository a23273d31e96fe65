//! Drives the compiled `anticipate` binary end to end: exit codes, resume
//! equivalence, artifact layout, and the predict/eval output contracts.

use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

struct Cmd(Command);

impl Cmd {
    fn new() -> Self {
        Cmd(Command::new(env!("CARGO_BIN_EXE_anticipate")))
    }

    fn a(mut self, arg: impl AsRef<OsStr>) -> Self {
        self.0.arg(arg);
        self
    }

    /// Runs and returns stdout, panicking on a nonzero exit.
    fn ok(mut self) -> String {
        let out = self.0.output().expect("binary should launch");
        assert!(
            out.status.success(),
            "expected success, got {:?}\nstderr: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).into_owned()
    }

    /// Runs and returns stderr, asserting the exit code.
    fn code(mut self, code: i32) -> String {
        let out = self.0.output().expect("binary should launch");
        assert_eq!(
            out.status.code(),
            Some(code),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stderr).into_owned()
    }
}

/// Small dataset most tests share the shape of: 14 episodes, default grammar.
fn gen_dataset(tmp: &TempDir) -> PathBuf {
    let data = tmp.path().join("data");
    Cmd::new()
        .a("gen-data")
        .a("--out")
        .a(&data)
        .a("--episodes")
        .a("14")
        .ok();
    data
}

fn train_run(data: &Path, out: &Path, steps: &str) {
    Cmd::new()
        .a("train")
        .a("--data")
        .a(data)
        .a("--out")
        .a(out)
        .a("--steps")
        .a(steps)
        .ok();
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[data]\nepisodess = 10\n").unwrap();
    let err = Cmd::new()
        .a("--config")
        .a(&cfg)
        .a("gen-data")
        .a("--out")
        .a(tmp.path().join("d"))
        .code(2);
    assert!(err.contains("episodess"), "should name the bad key: {err}");
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    Cmd::new()
        .a("train")
        .a("--data")
        .a(tmp.path().join("nope"))
        .a("--out")
        .a(tmp.path().join("run"))
        .a("--steps")
        .a("1")
        .code(3);
}

#[test]
fn diverged_training_is_a_numeric_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(&tmp);
    let cfg = tmp.path().join("explode.toml");
    std::fs::write(&cfg, "[train]\nlr = 1e9\nsteps = 30\n").unwrap();
    let err = Cmd::new()
        .a("--config")
        .a(&cfg)
        .a("train")
        .a("--data")
        .a(&data)
        .a("--out")
        .a(tmp.path().join("run"))
        .code(4);
    assert!(
        err.contains("loss") || err.contains("gradient"),
        "should describe the numeric failure: {err}"
    );
}

#[test]
fn resume_reproduces_the_uninterrupted_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(&tmp);
    let full = tmp.path().join("full");
    let part = tmp.path().join("part");
    let cont = tmp.path().join("cont");

    train_run(&data, &full, "40");
    train_run(&data, &part, "20");
    Cmd::new()
        .a("train")
        .a("--data")
        .a(&data)
        .a("--out")
        .a(&cont)
        .a("--steps")
        .a("20")
        .a("--resume")
        .a(part.join("checkpoint.akpt"))
        .ok();

    let a = std::fs::read(full.join("checkpoint.akpt")).unwrap();
    let b = std::fs::read(cont.join("checkpoint.akpt")).unwrap();
    assert_eq!(a, b, "resumed run should land on the identical checkpoint");
}

#[test]
fn train_writes_the_run_directory_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(&tmp);
    let run = tmp.path().join("run");
    train_run(&data, &run, "12");
    for f in ["checkpoint.akpt", "best.akpt", "curve.txt", "config.toml", "manifest.txt"] {
        assert!(run.join(f).is_file(), "missing artifact {f}");
    }
    let manifest = std::fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest.contains("knowledge-guidance: on"), "{manifest}");
    let curve = std::fs::read_to_string(run.join("curve.txt")).unwrap();
    assert!(curve.lines().count() >= 2, "curve should sample steps: {curve}");
}

#[test]
fn eval_writes_reports_and_prediction_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(&tmp);
    let run = tmp.path().join("run");
    train_run(&data, &run, "12");

    let stdout = Cmd::new()
        .a("eval")
        .a("--data")
        .a(&data)
        .a("--run")
        .a(&run)
        .a("--alpha")
        .a("10")
        .a("--beta")
        .a("30")
        .ok();
    assert!(stdout.contains("MoC"), "table header expected: {stdout}");
    for f in ["eval-test.txt", "eval-test.json", "preds-test.jsonl"] {
        assert!(run.join(f).is_file(), "missing artifact {f}");
    }
    let jsonl = std::fs::read_to_string(run.join("preds-test.jsonl")).unwrap();
    assert!(!jsonl.trim().is_empty(), "prediction dump is empty");

    Cmd::new()
        .a("--no-kg")
        .a("eval")
        .a("--data")
        .a(&data)
        .a("--run")
        .a(&run)
        .a("--alpha")
        .a("10")
        .a("--beta")
        .a("30")
        .ok();
    assert!(run.join("eval-test-nokg.txt").is_file());
}

#[test]
fn predict_prints_the_timeline_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_dataset(&tmp);
    let run = tmp.path().join("run");
    train_run(&data, &run, "12");

    let predict = |extra: &[&str]| {
        let mut cmd = Cmd::new();
        for e in extra {
            cmd = cmd.a(e);
        }
        cmd.a("predict")
            .a("--data")
            .a(&data)
            .a("--run")
            .a(&run)
            .a("--episode")
            .a("ep0003")
    };

    let stdout = predict(&[]).a("--inspect").ok();
    for needle in [
        "observed:",
        "recognized current action:",
        "predicted:",
        "ground truth:",
        "next action:",
        "window MoC",
        "context nodes used:",
        "R[encoder]",
    ] {
        assert!(stdout.contains(needle), "missing {needle:?} in:\n{stdout}");
    }

    let plain = predict(&["--no-kg"]).ok();
    assert!(plain.contains("knowledge guidance off"), "{plain}");
    assert!(plain.contains("context nodes used: 0"), "{plain}");

    Cmd::new()
        .a("predict")
        .a("--data")
        .a(&data)
        .a("--run")
        .a(&run)
        .a("--episode")
        .a("ep9999")
        .code(3);
    predict(&[]).a("--alpha").a("80").a("--beta").a("60").code(3);
}

#[test]
fn inspect_graph_reports_propagation() {
    let stdout = Cmd::new()
        .a("inspect-graph")
        .a("--scene")
        .a("tomato,knife")
        .a("--gamma")
        .a("0.9")
        .ok();
    assert!(stdout.contains("nodes"), "{stdout}");
    assert!(stdout.contains("tomato"), "{stdout}");
}
