//! End-to-end checks of the compiled binary: exit codes, output formats,
//! and determinism across invocations and thread counts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kbner(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbner"))
        .args(args)
        .current_dir(dir)
        .env("KBNER_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn assert_ok(output: &Output) -> String {
    assert_eq!(
        code(output),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout.clone()).expect("utf-8 stdout")
}

/// Generates a small benchmark, indexes it, and trains a model; returns the
/// workspace directory.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_ok(&kbner(
        root,
        &[
            "synth",
            "--entities",
            "6",
            "--labels",
            "LOC,ORG",
            "--ambiguity",
            "1.0",
            "--train",
            "48",
            "--test",
            "24",
            "--out",
            "data",
        ],
    ));
    assert_ok(&kbner(
        root,
        &[
            "build-index",
            "--corpus",
            "data/corpus.jsonl",
            "--out",
            "idx",
        ],
    ));
    assert_ok(&kbner(
        root,
        &[
            "train",
            "--data",
            "data/train.conll",
            "--out",
            "model.json",
            "--index",
            "idx",
            "--mentions",
            "sentence",
            "--k",
            "1",
            "--turns",
            "0",
            "--option",
            "sent",
            "--budget",
            "64",
            "--epochs",
            "8",
        ],
    ));
    dir
}

fn predict_args(out: &str) -> Vec<&str> {
    vec![
        "predict",
        "--model",
        "model.json",
        "--data",
        "data/test.conll",
        "--index",
        "idx",
        "--mentions",
        "sentence",
        "--k",
        "1",
        "--turns",
        "0",
        "--option",
        "sent",
        "--budget",
        "64",
        "--out",
        out,
    ]
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let top = kbner(dir.path(), &["--help"]);
    assert_eq!(code(&top), 0);
    let listing = String::from_utf8(top.stdout).unwrap();

    for name in [
        "build-index",
        "retrieve",
        "train",
        "predict",
        "ensemble",
        "evaluate",
        "iou-report",
        "synth",
        "run",
    ] {
        assert!(listing.contains(name), "top-level help misses {name}");
        let help = kbner(dir.path(), &[name, "--help"]);
        let text = assert_ok(&help);
        assert!(text.contains("--"), "{name} help lists no flags");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    assert_eq!(code(&kbner(root, &[])), 1, "missing subcommand");
    assert_eq!(
        code(&kbner(root, &["build-index", "--nope"])),
        1,
        "unknown flag"
    );
    assert_eq!(
        code(&kbner(
            root,
            &["retrieve", "--index", "idx", "--query", "q", "--option", "bogus"]
        )),
        1,
        "bad enum value"
    );
    assert_eq!(
        code(&kbner(
            root,
            &[
                "train",
                "--data",
                "d.conll",
                "--out",
                "m.json",
                "--mentions",
                "predicted"
            ]
        )),
        1,
        "predicted mentions for training"
    );
    assert_eq!(
        code(&kbner(
            root,
            &[
                "train",
                "--data",
                "d.conll",
                "--out",
                "m.json",
                "--mentions",
                "sentence"
            ]
        )),
        1,
        "augmented training without an index"
    );
    assert_eq!(
        code(&kbner(
            root,
            &["iou-report", "--pairs", "pairs.jsonl", "--bins", "0"]
        )),
        1,
        "zero bins"
    );

    let usage = kbner(root, &["build-index", "--nope"]);
    assert!(
        !usage.stderr.is_empty(),
        "usage error prints nothing to stderr"
    );
}

#[test]
fn missing_or_malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    assert_eq!(
        code(&kbner(
            root,
            &["build-index", "--corpus", "absent.jsonl", "--out", "idx"]
        )),
        2,
        "missing corpus"
    );
    assert_eq!(
        code(&kbner(
            root,
            &[
                "evaluate",
                "--gold",
                "absent.conll",
                "--pred",
                "absent.jsonl"
            ]
        )),
        2,
        "missing gold data"
    );

    fs::write(root.join("junk.json"), "not a model").unwrap();
    fs::write(root.join("t.conll"), "a\tO\n\n").unwrap();
    assert_eq!(
        code(&kbner(
            root,
            &["predict", "--model", "junk.json", "--data", "t.conll"]
        )),
        2,
        "corrupt model"
    );

    fs::write(root.join("bad.jsonl"), "{\"sentence_id\": 3}\n").unwrap();
    assert_eq!(
        code(&kbner(
            root,
            &["ensemble", "--preds", "bad.jsonl", "--threshold", "0.5"]
        )),
        2,
        "malformed prediction rows"
    );
}

#[test]
fn synth_pipeline_roundtrip() {
    let dir = fixture();
    let root = dir.path();

    assert_ok(&kbner(root, &predict_args("preds.jsonl")));
    let preds = fs::read_to_string(root.join("preds.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 24, "one row per test sentence");
    for line in preds.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(row["sentence_id"].is_string());
        assert!(row["spans"].is_array());
    }

    let eval_single = assert_ok(&kbner(
        root,
        &[
            "evaluate",
            "--gold",
            "data/test.conll",
            "--pred",
            "preds.jsonl",
        ],
    ));
    let report: serde_json::Value = serde_json::from_str(&eval_single).unwrap();
    let macro_f1 = report["macro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&macro_f1));

    assert_ok(&kbner(
        root,
        &[
            "ensemble",
            "--preds",
            "preds.jsonl",
            "preds.jsonl",
            "preds.jsonl",
            "--threshold",
            "0.5",
            "--out",
            "voted.jsonl",
        ],
    ));
    assert_eq!(
        fs::read(root.join("voted.jsonl")).unwrap(),
        fs::read(root.join("preds.jsonl")).unwrap(),
        "unanimous vote is not the identity"
    );

    let eval_voted = assert_ok(&kbner(
        root,
        &[
            "evaluate",
            "--gold",
            "data/test.conll",
            "--pred",
            "voted.jsonl",
        ],
    ));
    assert_eq!(eval_single, eval_voted);

    let pretty = assert_ok(&kbner(
        root,
        &[
            "evaluate",
            "--gold",
            "data/test.conll",
            "--pred",
            "preds.jsonl",
            "--pretty",
        ],
    ));
    assert!(pretty.contains("macro F1"), "pretty table missing summary");
}

#[test]
fn outputs_are_deterministic_across_runs_and_threads() {
    let dir = fixture();
    let root = dir.path();

    let mut one = predict_args("a.jsonl");
    one.extend(["--threads", "1"]);
    let mut two = predict_args("b.jsonl");
    two.extend(["--threads", "2"]);
    assert_ok(&kbner(root, &one));
    assert_ok(&kbner(root, &two));
    assert_eq!(
        fs::read(root.join("a.jsonl")).unwrap(),
        fs::read(root.join("b.jsonl")).unwrap(),
        "thread count changed predictions"
    );

    assert_ok(&kbner(
        root,
        &[
            "build-index",
            "--corpus",
            "data/corpus.jsonl",
            "--out",
            "idx2",
        ],
    ));
    assert_eq!(
        fs::read(root.join("idx/manifest.json")).unwrap(),
        fs::read(root.join("idx2/manifest.json")).unwrap(),
        "rebuilding the index changed the manifest"
    );
}

#[test]
fn retrieve_emits_parseable_contexts() {
    let dir = fixture();
    let root = dir.path();

    let text = assert_ok(&kbner(
        root,
        &[
            "retrieve",
            "--index",
            "idx",
            "--query",
            "surf0",
            "--field",
            "title",
            "--k",
            "3",
            "--option",
            "sent-nolink",
        ],
    ));
    assert!(
        !text.trim().is_empty(),
        "no contexts for an in-corpus surface"
    );
    for line in text.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(row["rank"].is_u64());
        assert!(row["title"].as_str().unwrap().contains("surf0"));
        assert!(!row["text"].as_str().unwrap().contains("<e:"));
    }

    let pretty = assert_ok(&kbner(
        root,
        &[
            "retrieve", "--index", "idx", "--query", "surf0", "--field", "title", "--k", "1",
            "--pretty",
        ],
    ));
    assert!(pretty.contains("surf0"));
}

#[test]
fn iou_report_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(
        root.join("pairs.jsonl"),
        "{\"query\":\"abc\",\"result\":\"abc\"}\n{\"query\":\"abc\",\"result\":\"xyz\"}\n",
    )
    .unwrap();

    let json = assert_ok(&kbner(
        root,
        &["iou-report", "--pairs", "pairs.jsonl", "--bins", "2"],
    ));
    let histogram: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(
        histogram["counts"][0], 1,
        "disjoint pair lands in the low bin"
    );
    assert_eq!(
        histogram["counts"][1], 1,
        "identical pair lands in the top bin"
    );
    assert_eq!(histogram["sample_count"], 2);

    let tsv = assert_ok(&kbner(
        root,
        &[
            "iou-report",
            "--pairs",
            "pairs.jsonl",
            "--bins",
            "2",
            "--tsv",
        ],
    ));
    let rows: Vec<&str> = tsv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split('\t').count() == 3));
}

#[test]
fn run_subcommand_is_reproducible() {
    let dir = fixture();
    let root = dir.path();

    let config = serde_json::json!({
        "corpus": root.join("data/corpus.jsonl"),
        "train_data": root.join("data/train.conll"),
        "test_data": root.join("data/test.conll"),
        "retrieval": {"k": 1, "turns": 0, "option": "sent", "token_budget": 64},
        "train": {"epochs": 6, "learning_rate": 0.2, "l2": 1e-4, "batch_size": 8, "seed": 42},
        "ensemble_size": 2,
    });
    fs::write(
        root.join("experiment.json"),
        serde_json::to_string_pretty(&config).unwrap(),
    )
    .unwrap();

    let first = assert_ok(&kbner(
        root,
        &["run", "--config", "experiment.json", "--run-dir", "run-a"],
    ));
    let report: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert!(report["macro_f1"].is_f64());
    assert!(root.join("run-a/report.json").exists());
    assert!(root.join("run-a/models/seed-43.json").exists());

    let second = assert_ok(&kbner(
        root,
        &["run", "--config", "experiment.json", "--run-dir", "run-b"],
    ));
    assert_eq!(
        first, second,
        "identical configs produced different reports"
    );
    assert_eq!(
        fs::read(root.join("run-a/report.json")).unwrap(),
        fs::read(root.join("run-b/report.json")).unwrap()
    );
}
