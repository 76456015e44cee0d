use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/demo")
}

fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        if e.file_name() == "work" {
            continue;
        }
        if e.file_type().unwrap().is_dir() {
            copy_tree(&e.path(), &to.join(e.file_name()));
        } else {
            std::fs::copy(e.path(), to.join(e.file_name())).unwrap();
        }
    }
}

fn workspace() -> TempDir {
    let t = tempfile::tempdir().unwrap();
    copy_tree(&demo(), t.path());
    t
}

fn semgest(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semgest"))
        .current_dir(dir)
        .args(["--config", "config.toml"])
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = semgest(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn train(dir: &Path) {
    ok(dir, &["train-codec"]);
    ok(dir, &["train-generator"]);
    ok(dir, &["build-index"]);
}

fn synth(dir: &Path, out: &str) -> Output {
    semgest(
        dir,
        &[
            "--seed",
            "1",
            "--deterministic",
            "synthesize",
            "--audio",
            "speech.wav",
            "--transcript",
            "transcript.json",
            "--out",
            out,
        ],
    )
}

fn set_config(dir: &Path, from: &str, to: &str) {
    let p = dir.join("config.toml");
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.contains(from), "config has no {from:?}");
    std::fs::write(&p, text.replacen(from, to, 1)).unwrap();
}

#[test]
fn bad_input_exits_with_two() {
    let t = workspace();
    let out = semgest(t.path(), &["tokenize", "--motion", "missing.bvh", "--out", "x.tok"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(t.path().join("broken.json"), "{ not json").unwrap();
    let out = semgest(t.path(), &["build-instruct", "--annotated", "broken.json", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_failure_exits_with_one() {
    let t = workspace();
    ok(t.path(), &["build-index"]);
    std::fs::write(t.path().join("blocker"), "").unwrap();
    let out = semgest(t.path(), &["retrieve", "--transcript", "transcript.json", "--out", "blocker/r.json"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stale_generator_is_rejected() {
    let t = workspace();
    train(t.path());
    set_config(t.path(), "codebook_size = 64", "codebook_size = 32");
    ok(t.path(), &["train-codec"]);
    let out = synth(t.path(), "out/a.bvh");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("generator"));
}

#[test]
fn evaluate_refuses_outputs_from_another_config() {
    let t = workspace();
    let d = t.path();
    train(d);
    assert_eq!(synth(d, "out/a.bvh").status.code(), Some(0));
    // Same files, but the seed override is part of the recorded config.
    let out = semgest(
        d,
        &["evaluate", "--metric", "fgd", "--real", "train/take_a.bvh", "--generated", "out/a.bvh", "--out", "out/fgd.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn pipeline_is_deterministic_and_evaluates() {
    let t = workspace();
    let d = t.path();
    train(d);
    assert_eq!(synth(d, "out/a.bvh").status.code(), Some(0));
    assert_eq!(synth(d, "out/b.bvh").status.code(), Some(0));
    assert_eq!(std::fs::read(d.join("out/a.bvh")).unwrap(), std::fs::read(d.join("out/b.bvh")).unwrap());
    assert!(d.join("out/a.bvh.meta.json").exists());

    ok(d, &["--seed", "1", "tokenize", "--motion", "train/take_a.bvh", "--out", "out/take_a.tok"]);
    ok(d, &["--seed", "1", "detokenize", "--tokens", "out/take_a.tok", "--out", "out/take_a.bvh"]);

    ok(
        d,
        &[
            "--seed",
            "1",
            "evaluate",
            "--metric",
            "fgd",
            "--real",
            "train/take_a.bvh",
            "train/take_b.bvh",
            "--generated",
            "out/a.bvh",
            "out/take_a.bvh",
            "--out",
            "out/fgd.json",
        ],
    );
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/fgd.json")).unwrap()).unwrap();
    assert_eq!(report["metric"], "fgd");
    assert!(report["value"].as_f64().unwrap() >= 0.0);

    ok(d, &["retrieve", "--transcript", "transcript.json", "--out", "out/r.json"]);
    ok(
        d,
        &["evaluate", "--metric", "accuracy", "--annotations", "out/r.json", "--out", "out/acc.json", "--csv", "out/acc.csv"],
    );
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/acc.json")).unwrap()).unwrap();
    assert_eq!(report["value"].as_f64(), Some(1.0));
    assert!(std::fs::read_to_string(d.join("out/acc.csv")).unwrap().lines().count() >= 2);
}

#[test]
fn manual_retrieval_requires_an_input() {
    let t = workspace();
    ok(t.path(), &["build-index"]);
    let out = semgest(t.path(), &["retrieve", "--mode", "manual", "--transcript", "transcript.json", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
}
