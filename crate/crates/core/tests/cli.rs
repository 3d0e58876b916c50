//! End-to-end runs of the `hflow` binary.

use std::path::Path;
use std::process::{Command, Output};

fn hflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hflow"))
        .args(args)
        .env("HFLOW_THREADS", "2")
        .output()
        .expect("spawn hflow")
}

fn ok(args: &[&str]) -> Output {
    let out = hflow(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "hflow {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    with_fine_tune(args, "5")
}

fn with_fine_tune<'a>(args: &[&'a str], epochs: &'a str) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&["--hidden-dim", "8", "--latent-dim", "4", "--fine-tune-epochs", epochs]);
    v
}

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "gen-synth",
        "--out",
        s(dir),
        "--seed",
        "7",
        "--classes",
        "4",
        "--dim",
        "6",
        "--samples-per-class",
        "12",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Mean of `metric` in a summary file.
fn summary_top(path: &Path, metric: &str) -> f64 {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "mean").unwrap();
    for row in r.records() {
        let row = row.unwrap();
        if &row[0] == metric {
            return row[col].parse().unwrap();
        }
    }
    panic!("no {metric} row");
}

#[test]
fn gen_synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen(&a, &["--covariance", "full"]);
    gen(&b, &["--covariance", "full"]);
    for f in ["embeddings.hfemb", "manifest.txt"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs");
    }
    let run: serde_json::Value = serde_json::from_slice(&read(&a.join("run_manifest.json"))).unwrap();
    assert_eq!(run["command"], "gen-synth");
    assert_eq!(run["seed"], 7);
}

#[test]
fn full_covariance_in_sixteen_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-synth", "--out", s(dir.path()), "--covariance", "full", "--dim", "16", "--classes", "3"]);
    let ds = hflow::data::load_embeddings(&dir.path().join("embeddings.hfemb")).unwrap();
    assert_eq!(ds.dim(), 16);
    assert_eq!(ds.records().len(), 300);
}

#[test]
fn pipeline_is_deterministic_and_matches_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, &[]);
    let manifest = data.join("manifest.txt");
    let adapter = dir.path().join("adapter");
    ok(&with_small(&[
        "train-adapter",
        "--manifest",
        s(&manifest),
        "--out",
        s(&adapter),
        "--seed",
        "3",
        "--flow-length",
        "0",
        "--k-shot",
        "2",
        "--epochs",
        "4",
    ]));
    let ckpt = adapter.join("adapter.hflow");
    let eval = |out: &Path| {
        ok(&with_small(&[
            "eval",
            "--manifest",
            s(&manifest),
            "--checkpoint",
            s(&ckpt),
            "--out",
            s(out),
            "--seed",
            "3",
            "--k-shot",
            "2",
            "--n-way",
            "3",
            "--n-query",
            "4",
            "--episodes",
            "6",
        ]));
    };
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    eval(&e1);
    eval(&e2);
    for f in ["eval.csv", "summary.csv"] {
        assert_eq!(read(&e1.join(f)), read(&e2.join(f)), "{f} differs between runs");
    }

    let abl = dir.path().join("abl");
    ok(&with_small(&[
        "ablate",
        "--manifest",
        s(&manifest),
        "--out",
        s(&abl),
        "--seed",
        "3",
        "--lengths",
        "0",
        "--shots",
        "2",
        "--epochs",
        "4",
        "--n-way",
        "3",
        "--n-query",
        "4",
        "--episodes",
        "6",
    ]));
    let mut r = csv::Reader::from_path(abl.join("ablation.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let row = r.records().next().unwrap().unwrap();
    let col = headers.iter().position(|h| h == "top1_mean").unwrap();
    let ablated: f64 = row[col].parse().unwrap();
    assert_eq!(ablated, summary_top(&e1.join("summary.csv"), "top1"));
}

#[test]
fn separable_two_way_episode_is_solved() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "gen-synth",
        "--out",
        s(&data),
        "--classes",
        "2",
        "--dim",
        "4",
        "--samples-per-class",
        "20",
        "--mean-scale",
        "5",
        "--noise-scale",
        "0.1",
    ]);
    let manifest = data.join("manifest.txt");
    let adapter = dir.path().join("adapter");
    ok(&with_fine_tune(&[
        "train-adapter",
        "--manifest",
        s(&manifest),
        "--out",
        s(&adapter),
        "--flow-length",
        "1",
        "--k-shot",
        "3",
        "--epochs",
        "20",
    ], "50"));
    let out = dir.path().join("eval");
    ok(&with_fine_tune(&[
        "eval",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&adapter.join("adapter.hflow")),
        "--out",
        s(&out),
        "--k-shot",
        "3",
        "--n-way",
        "2",
        "--n-query",
        "10",
        "--episodes",
        "1",
    ], "50"));
    assert_eq!(summary_top(&out.join("summary.csv"), "top1"), 1.0);
    // With at most five classes every label is inside the top five.
    assert_eq!(summary_top(&out.join("summary.csv"), "top5"), 1.0);
}

#[test]
fn validation_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, &[]);
    let manifest = data.join("manifest.txt");
    let out = dir.path().join("x");
    // zero shots is rejected by the argument parser
    let zero = hflow(&["train-adapter", "--manifest", s(&manifest), "--out", s(&out), "--k-shot", "0"]);
    assert_eq!(zero.status.code(), Some(1));
    // more shots than records per class
    let many = hflow(&["train-adapter", "--manifest", s(&manifest), "--out", s(&out), "--k-shot", "50"]);
    assert_eq!(many.status.code(), Some(1));
    let missing = hflow(&["eval", "--dataset", "/nonexistent.hfemb", "--checkpoint", "/nope", "--out", s(&out)]);
    assert_ne!(missing.status.code(), Some(0));
}

#[test]
fn verify_runs_selected_suites() {
    let all = ok(&["verify"]);
    let text = String::from_utf8(all.stdout).unwrap();
    for suite in hflow::verify::SUITES {
        assert!(text.contains(suite), "missing {suite}");
    }
    assert!(!text.contains("FAIL"));

    let one = ok(&["verify", "--suite", "theorem2"]);
    let text = String::from_utf8(one.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("theorem2"));

    assert_eq!(hflow(&["verify", "--suite", "nonsense"]).status.code(), Some(1));
}
