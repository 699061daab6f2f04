mod common;

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sketchssl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn cfg(rel: &str) -> String {
    common::config_path(rel).to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bad_arguments_exit_with_one() {
    let out = run(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn missing_checkpoint_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.safetensors");
    let out = run(&[
        "embed", "--checkpoint", s(&missing), "--manifest", s(&dir.path().join("m.json")),
        "--data-dir", s(dir.path()), "--out", s(&dir.path().join("e.emb")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--checkpoint"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--set", "no_such_key=3", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn manifests_are_reproducible_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let p = |rel: &str| dir.path().join(rel);
    ok(&["synth", "--config", &cfg("toy/synth.json"), "--set", "per_class=40", "--out-dir", s(&p("data"))]);
    let prepare = |seed: &str, out: &str| {
        ok(&[
            "prepare", "--config", &cfg("toy/prepare.json"), "--set", &format!("seed={seed}"),
            "--set", "samples_per_class=20", "--set", "test_per_class=10",
            "--data-dir", s(&p("data")), "--out", s(&p(out)),
        ]);
        std::fs::read(p(out)).unwrap()
    };
    let a = prepare("7", "a.json");
    let b = prepare("7", "b.json");
    let c = prepare("8", "c.json");
    assert_eq!(a, b);
    assert_ne!(a, c);

    ok(&[
        "train", "--config", &cfg("toy/vae.json"), "--set", "epochs=1",
        "--manifest", s(&p("a.json")), "--data-dir", s(&p("data")), "--out-dir", s(&p("run")),
    ]);
    let (ckpt, data, report) = (p("run/final.safetensors"), p("data"), p("report.json"));
    let evaluate = |manifest: &str, force: bool| {
        let mut args = vec![
            "evaluate", "--checkpoint", s(&ckpt), "--manifest", manifest,
            "--data-dir", s(&data), "--out", s(&report),
        ];
        if force {
            args.push("--force");
        }
        run(&args)
    };
    let (same, other) = (p("b.json"), p("c.json"));
    let refused = evaluate(s(&other), false);
    assert_eq!(refused.status.code(), Some(1));
    assert!(!report.exists());
    assert!(evaluate(s(&other), true).status.success());
    assert!(evaluate(s(&same), false).status.success());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    for split in ["known", "unknown"] {
        let m = &report[split];
        assert!(m["knn_accuracy"].as_f64().is_some() && m["map_at_5"].as_f64().is_some(), "{report}");
    }
}
