use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

const BLOBS: &str = r#"
seed = 7
dim = 512

[data]
kind = "blobs"
classes = 3
features = 16
samples_per_class = 300
separation = 5.0

[compression]
rank = 8
prune_ratio = 0.5
bitwidth = 4
mode = "weighted-svd"
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpqhd"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn records(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_on_blobs_writes_model_and_reaches_99_percent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", BLOBS);
    let out = tmp.path().join("out");
    let metrics = tmp.path().join("m.jsonl");
    ok(&run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--metrics",
        s(&metrics),
    ]));
    assert!(out.join("model.dpqh").is_file());
    let rec = &records(&metrics)[0];
    assert_eq!(rec["command"], "train");
    assert!(rec["test_accuracy"].as_f64().unwrap() >= 0.99, "{rec}");
}

#[test]
fn same_seed_gives_identical_model_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", BLOBS);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(&run(&["train", "--config", s(&cfg), "--out", s(dir)]));
        ok(&run(&["compress", "--config", s(&cfg), "--out", s(dir)]));
    }
    for f in ["model.dpqh", "compressed.dpqh", "compressed.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }

    ok(&run(&[
        "train",
        "--config",
        s(&cfg),
        "--seed",
        "8",
        "--out",
        s(&b),
    ]));
    assert_ne!(
        std::fs::read(a.join("model.dpqh")).unwrap(),
        std::fs::read(b.join("model.dpqh")).unwrap()
    );
}

#[test]
fn missing_dataset_exits_2_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("nowhere");
    let out = run(&[
        "train",
        "--dataset",
        "mnist",
        "--data-dir",
        s(&data),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(s(&data.join("mnist"))), "{err}");
}

#[test]
fn malformed_artifact_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", BLOBS);
    let model = write_config(tmp.path(), "bad.dpqh", "DPQH but not really");
    let out = run(&[
        "eval",
        "--config",
        s(&cfg),
        "--model",
        s(&model),
        "--mode",
        "full",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let bad_key = write_config(tmp.path(), "k.toml", "sed = 3\n");
    let out = run(&[
        "train",
        "--config",
        s(&bad_key),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = write_config(tmp.path(), "b.toml", BLOBS);
    let o = tmp.path().join("o");
    ok(&run(&["train", "--config", s(&cfg), "--out", s(&o)]));
    let out = run(&[
        "compress",
        "--config",
        s(&cfg),
        "--out",
        s(&o),
        "--bits",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&[
        "compress",
        "--config",
        s(&cfg),
        "--out",
        s(&o),
        "--prune",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn full_rank_no_prune_no_quantization_matches_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{BLOBS}quantize_p1 = false\nquantize_p2 = false\nquantize_w = false\n\n\
         [calibration]\nrank_grid = [16]\nprune_grid = [0.0]\n"
    );
    let cfg = write_config(
        tmp.path(),
        "full.toml",
        &text.replace("weighted-svd", "svd-approx"),
    );
    let out = tmp.path().join("out");
    let metrics = tmp.path().join("m.jsonl");
    ok(&run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--metrics",
        s(&metrics),
    ]));
    let base = records(&metrics)[0]["test_accuracy"].as_f64().unwrap();

    ok(&run(&[
        "compress",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--metrics",
        s(&metrics),
    ]));
    let side = &records(&metrics)[0];
    assert_eq!(side["config"]["rank"], 16);
    assert_eq!(side["config"]["prune_ratio"], 0.0);
    let stages = side["provenance"].as_array().unwrap();
    assert_eq!(stages.len(), 3);
    let first = stages[0]["accuracy"].as_f64().unwrap();
    for st in stages {
        assert_eq!(st["accuracy"].as_f64().unwrap(), first);
    }
    assert!(out.join("calibration.jsonl").is_file());

    ok(&run(&[
        "eval",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--metrics",
        s(&metrics),
        "--mode",
        "full",
    ]));
    let ev = &records(&metrics)[0];
    assert!((ev["ops"]["accuracy_full"].as_f64().unwrap() - base).abs() < 1e-12);
}

#[test]
fn eval_full_mode_reports_zero_reduction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", BLOBS);
    let out = tmp.path().join("out");
    let metrics = tmp.path().join("m.jsonl");
    ok(&run(&["train", "--config", s(&cfg), "--out", s(&out)]));
    let model = out.join("model.dpqh");
    ok(&run(&[
        "eval",
        "--config",
        s(&cfg),
        "--model",
        s(&model),
        "--mode",
        "full",
        "--metrics",
        s(&metrics),
    ]));
    let rec = &records(&metrics)[0];
    assert_eq!(rec["ops"]["reduction_percent"].as_f64().unwrap(), 0.0);
    assert_eq!(rec["mode"], "full");

    // adaptive mode without a sidecar or --tau has no threshold
    let out = run(&["eval", "--config", s(&cfg), "--model", s(&model)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_smoke_is_fast_complete_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", BLOBS);
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let metrics = tmp.path().join(format!("{name}.jsonl"));
        let t = Instant::now();
        ok(&run(&[
            "bench",
            "--config",
            s(&cfg),
            "--out",
            s(&tmp.path().join(name)),
            "--metrics",
            s(&metrics),
        ]));
        assert!(
            t.elapsed().as_secs_f64() < 10.0,
            "bench took {:?}",
            t.elapsed()
        );
        let recs = records(&metrics);
        let bench = recs.into_iter().find(|r| r["command"] == "bench").unwrap();
        reports.push(bench);
    }
    assert_eq!(reports[0], reports[1]);

    let r = &reports[0];
    for key in [
        "encoder_bytes",
        "model_bytes",
        "scale_bytes",
        "total_bytes",
        "encode_macs",
        "similarity_macs_full",
        "reduction_vs_baseline",
        "baseline",
    ] {
        assert!(r["compressed"].get(key).is_some(), "missing {key}");
        assert!(r["baseline"].get(key).is_some(), "missing {key}");
    }
    assert!(r["speedup_proxy"].as_f64().unwrap() > 1.0);
    assert!(r["compressed"]["total_bytes"].as_u64() < r["baseline"]["total_bytes"].as_u64());
}
