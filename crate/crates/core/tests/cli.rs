//! The `egoworld` binary end to end on the tiny config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use egoworld::model::read_log;
use egoworld::synthenv::validate_dataset;
use serde_json::Value;
use tempfile::TempDir;

fn config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/tiny.json")
        .to_string_lossy()
        .into_owned()
}

fn egoworld(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_egoworld"));
    cmd.args(args).env_remove("LOME_SEED");
    if let Some(s) = seed {
        cmd.env("LOME_SEED", s);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = egoworld(args, None);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

struct Run {
    dir: TempDir,
}

impl Run {
    fn new() -> Self {
        let run = Run {
            dir: tempfile::tempdir().unwrap(),
        };
        ok(&["gen-data", "--config", &config(), "--out", &run.s("data")]);
        run
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn s(&self, rel: &str) -> String {
        p(&self.path(rel))
    }

    fn episode(&self, i: usize) -> String {
        let m = validate_dataset(&self.path("data")).unwrap();
        p(&self.path("data").join(&m.episodes[i].dir))
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let cfg = config();
        let mut args = vec!["train", "--config", &cfg];
        let (d, o) = (self.s("data"), self.s(out));
        args.extend(["--data", &d, "--out", &o]);
        args.extend(extra);
        ok(&args);
    }
}

fn error_of(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

#[test]
fn train_logs_every_interval_and_resume_matches() {
    let run = Run::new();
    run.train("full", &[]);
    let full = read_log(&run.path("full/loss.jsonl")).unwrap();
    // tiny.json: 20 steps, log_every 5
    assert_eq!(
        full.iter().map(|r| r.step).collect::<Vec<_>>(),
        vec![5, 10, 15, 20]
    );

    run.train("split", &["--steps", "10"]);
    run.train("split", &["--steps", "20", "--resume"]);
    let split = read_log(&run.path("split/loss.jsonl")).unwrap();
    assert_eq!(split, full);
    assert_eq!(
        fs::read(run.path("split/params.bin")).unwrap(),
        fs::read(run.path("full/params.bin")).unwrap()
    );
}

#[test]
fn sampling_modes_and_sidecar() {
    let run = Run::new();
    run.train("ck", &[]);
    let ep = run.episode(11);
    let sample = |out: &str, extra: &[&str]| {
        let cfg = config();
        let mut args = vec!["sample", "--config", &cfg];
        let (c, o) = (run.s("ck"), run.s(out));
        args.extend(["--checkpoint", &c, "--episode", &ep, "--out", &o]);
        args.extend(extra);
        ok(&args);
    };
    sample("default", &[]);
    let sidecar: Value =
        serde_json::from_str(&fs::read_to_string(run.path("default/sample.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["guidance"]["mode"], "inner");
    assert_eq!(sidecar["guidance"]["w1"], 5.0);
    assert_eq!(sidecar["guidance"]["w2"], 3.0);
    assert_eq!(sidecar["with_action"], true);

    sample("none", &["--mode", "none", "--w1", "0", "--w2", "0"]);
    sample("cfg0", &["--mode", "cfg", "--w", "0"]);
    let frames = |d: &str| {
        let mut v: Vec<_> = fs::read_dir(run.path(d).join("frames"))
            .unwrap()
            .map(|e| fs::read(e.unwrap().path()).unwrap())
            .collect();
        v.sort();
        v
    };
    assert_eq!(frames("none"), frames("cfg0"));

    sample("null", &["--no-action"]);
    let sidecar: Value =
        serde_json::from_str(&fs::read_to_string(run.path("null/sample.json")).unwrap()).unwrap();
    assert_eq!(sidecar["with_action"], false);
    assert_ne!(frames("null"), frames("default"));
}

#[test]
fn eval_of_ground_truth_against_itself() {
    let run = Run::new();
    let ep = run.episode(0);
    let out = ok(&["eval", "--gen", &ep, "--gt", &ep, "--config", &config()]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pck"]["pck"], 100.0);
    assert_eq!(report["ssim"], 1.0);
    assert_eq!(report["pck"]["threshold"], 5.0);
}

#[test]
fn seed_variable_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let o = egoworld(
            &[
                "gen-data",
                "--config",
                &config(),
                "--out",
                &p(&out),
                "--count",
                "2",
            ],
            seed,
        );
        assert!(o.status.success());
        validate_dataset(&out).unwrap()
    };
    let base = gen("base", None);
    let a = gen("a", Some("77"));
    let b = gen("b", Some("77"));
    assert_eq!(a.config.seed, 77);
    assert_eq!(a.episodes, b.episodes);
    assert_ne!(a.episodes, base.episodes);

    let bad = egoworld(
        &[
            "gen-data",
            "--config",
            &config(),
            "--out",
            &p(&dir.path().join("c")),
        ],
        Some("x"),
    );
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(error_of(&bad)["error"], "config");
}

#[test]
fn failures_exit_nonzero_with_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let usage = egoworld(&["train", "--bogus"], None);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(error_of(&usage)["error"], "usage");

    let missing = p(&dir.path().join("nope"));
    let out = egoworld(&["eval", "--gen", &missing, "--gt", &missing], None);
    assert_eq!(out.status.code(), Some(1));
    let e = error_of(&out);
    assert_eq!(e["error"], "file");
    assert!(e["message"].as_str().unwrap().contains("nope"));
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);

    let out = egoworld(&["train", "--data", &missing, "--out", &missing], None);
    assert_eq!(out.status.code(), Some(1));

    let help = egoworld(&["--help"], None);
    assert!(help.status.success());
    let text = String::from_utf8_lossy(&help.stdout);
    for cmd in ["gen-data", "train", "sample", "eval", "ablate"] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
}

#[test]
fn ablate_rejects_unknown_variant() {
    let run = Run::new();
    let out = egoworld(
        &[
            "ablate",
            "--config",
            &config(),
            "--data",
            &run.s("data"),
            "--out",
            &run.s("abl"),
            "--variants",
            "full,bogus",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(error_of(&out)["message"]
        .as_str()
        .unwrap()
        .contains("bogus"));
}
