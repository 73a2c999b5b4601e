use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::tempdir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data")
        .join(name)
}

fn conextract(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conextract"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn stats_reports_a_table_row() {
    let o = conextract(&[
        "stats",
        "--dataset",
        path(&data("tiny_midas.jsonl")),
        "--field-map",
        "midas",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().nth(2).unwrap().starts_with("tiny_midas"));

    let o = conextract(&["stats", "--dataset", path(&data("tiny_test.jsonl")), "--format", "json"]);
    let stats: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["n_doc"], 3);
    assert_eq!(stats["max_con"], 5);
    assert_eq!(stats["min_con"], 4);
}

#[test]
fn stats_csv_has_header_and_row() {
    let o = conextract(&["stats", "--dataset", path(&data("tiny_test.jsonl")), "--format", "csv"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn prompts_list_and_dump() {
    let o = conextract(&["prompts"]);
    let names: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(names.len(), 12);
    assert!(names.contains(&"ZS-TaskContext".to_string()));

    let o = conextract(&["prompts", "--dump"]);
    let dump: Value = serde_json::from_slice(&o.stdout).unwrap();
    let text = dump.to_string();
    assert!(text.contains("Computer Science, Control, and Information Technology"));
    assert!(text.contains("[DOCUMENT]"));
}

#[test]
fn usage_errors_exit_with_1() {
    assert_eq!(conextract(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(conextract(&["stats"]).status.code(), Some(1));
    let dir = tempdir().unwrap();
    let o = conextract(&[
        "run",
        "--test",
        path(&data("tiny_test.jsonl")),
        "-o",
        path(dir.path()),
        "--model",
        "m",
        "--backend",
        "echo-gold",
        "--template",
        "FS-Random",
        "--fs-n",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("seed"));
    assert_eq!(conextract(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_2() {
    let dir = tempdir().unwrap();
    let o = conextract(&["stats", "--dataset", path(&dir.path().join("missing.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = conextract(&["cache", "ls", "--cache", path(&dir.path().join("none.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn mock_run(dir: &Path, backend: &str) -> Output {
    conextract(&[
        "run",
        "--test",
        path(&data("tiny_test.jsonl")),
        "--train",
        path(&data("tiny_train.jsonl")),
        "--dataset-name",
        "tiny",
        "--model",
        "mock",
        "--backend",
        backend,
        "--template",
        "ZS-Keyphrases",
        "--cache",
        path(&dir.join("cache.jsonl")),
        "-o",
        path(&dir.join(backend)),
        "--format",
        "csv",
    ])
}

#[test]
fn run_writes_artifacts_and_prints_report() {
    let dir = tempdir().unwrap();
    let o = mock_run(dir.path(), "noisy-gold");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "dataset,model,prompt,P,R,F1,F1@5,F1@10,N_EX\ntiny,mock,ZS-Keyphrases,1.0000,1.0000,1.0000,1.0000,1.0000,4.6667\n"
    );
    let out = dir.path().join("noisy-gold");
    for f in [
        "extractions.jsonl",
        "manifest.json",
        "report.json",
        "report.csv",
        "report.txt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["timestamp"], "2023-11-14T22:13:20Z");
    assert_eq!(manifest["cache_hit_ratio"], 0.0);
}

#[test]
fn manifest_replays_byte_identically() {
    let dir = tempdir().unwrap();
    assert!(mock_run(dir.path(), "echo-gold").status.success());
    let first = dir.path().join("echo-gold");
    let replay_out = dir.path().join("replay");
    let o = conextract(&[
        "run",
        "--config",
        path(&first.join("manifest.json")),
        "--backend",
        "replay",
        "-o",
        path(&replay_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.csv", "report.json", "report.txt", "extractions.jsonl"] {
        assert_eq!(
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(replay_out.join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(replay_out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cache_hit_ratio"], 1.0);
}

#[test]
fn extract_writes_only_extractions() {
    let dir = tempdir().unwrap();
    let o = conextract(&[
        "extract",
        "--test",
        path(&data("tiny_test.jsonl")),
        "--method",
        "firstphrases",
        "--top-n",
        "4",
        "-o",
        path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("3 documents, 12 concepts"));
    let lines = std::fs::read_to_string(dir.path().join("extractions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    assert!(!dir.path().join("report.csv").exists());
}

#[test]
fn sweep_over_templates() {
    let dir = tempdir().unwrap();
    let o = conextract(&[
        "sweep",
        "--test",
        path(&data("tiny_test.jsonl")),
        "--model",
        "mock",
        "--backend",
        "echo-gold",
        "--template",
        "ZS-Keyphrases",
        "-o",
        path(dir.path()),
        "--templates",
        "ZS-Keywords,ZS-Keyphrases,ZS-Concepts,ZS-Entities,ZS-Topics",
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    let metrics: Vec<String> = rows
        .iter()
        .map(|r| r.split(',').skip(3).collect::<Vec<_>>().join(","))
        .collect();
    assert!(metrics.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(std::fs::read_to_string(dir.path().join("results.csv")).unwrap(), out);
}

#[test]
fn sweep_reports_failed_runs_and_exits_2() {
    let dir = tempdir().unwrap();
    let good = dir.path().join("good.json");
    let bad = dir.path().join("bad.json");
    let test = data("tiny_test.jsonl");
    std::fs::write(
        &good,
        serde_json::json!({
            "dataset": {"test_path": test},
            "method": "firstphrases",
            "io": {"output_dir": dir.path().join("g")},
        })
        .to_string(),
    )
    .unwrap();
    std::fs::write(
        &bad,
        serde_json::json!({
            "dataset": {"test_path": dir.path().join("missing.jsonl")},
            "method": "firstphrases",
            "io": {"output_dir": dir.path().join("b")},
        })
        .to_string(),
    )
    .unwrap();
    let o = conextract(&["sweep", "--configs", &format!("{},{}", path(&good), path(&bad))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 4);
    assert!(out.contains("missing.jsonl"));
}

#[test]
fn embed_then_cache_maintenance() {
    let dir = tempdir().unwrap();
    let cache = dir.path().join("emb.jsonl");
    let o = conextract(&[
        "embed",
        "--dataset",
        path(&data("tiny_train.jsonl")),
        "--test",
        path(&data("tiny_test.jsonl")),
        "--backend",
        "echo-gold",
        "--embedding-cache",
        path(&cache),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("embedded 6 documents"));
    assert_eq!(std::fs::read_to_string(&cache).unwrap().lines().count(), 6);

    assert!(mock_run(dir.path(), "echo-gold").status.success());
    let responses = dir.path().join("cache.jsonl");
    let ls = conextract(&["cache", "ls", "--cache", path(&responses)]);
    assert!(stdout(&ls).ends_with("3 entries\n"));
    let export = dir.path().join("export.jsonl");
    let o = conextract(&["cache", "export", "--cache", path(&responses), "-o", path(&export)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&export).unwrap().lines().count(), 3);
    let o = conextract(&["cache", "clear", "--cache", path(&responses)]);
    assert!(stdout(&o).starts_with("removed 3 entries"));
    let ls = conextract(&["cache", "ls", "--cache", path(&responses)]);
    assert_eq!(stdout(&ls), "0 entries\n");
}
