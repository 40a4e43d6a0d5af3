//! End-to-end runs of the `moma` binary on a tiny synthetic task.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "synthetic": {"source_topics": 6, "target_topics": 3, "core_words": 6, "source_docs_per_topic": 4,
                "target_docs_per_topic": 4, "wiki_docs_per_topic": 2, "mesh_docs_per_topic": 2,
                "mesh_source_topics": 2, "train_queries_per_topic": 3, "dev_queries_per_topic": 1,
                "test_queries_per_topic": 2, "background_words": 30, "doc_len": 8},
  "model": {"model_dim": 8, "num_layers": 1, "num_heads": 2, "feedforward_dim": 16, "max_query_len": 6,
            "max_doc_len": 10, "k_default": 4, "freeze_token_embeddings": true},
  "train": {"episodes": 1, "epochs_per_episode": 1, "warmup_epochs": 1, "k": 4, "n": 2,
            "mining_depth": 20, "negatives": 3, "batch_size": 8}
}"#;

fn moma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moma")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = moma(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path) -> String {
    let tiny = dir.join("tiny.json");
    std::fs::write(&tiny, TINY).unwrap();
    let out = dir.join("run");
    ok(&["gen-task", "--config", tiny.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    out.join("experiment.json").to_str().unwrap().to_string()
}

#[test]
fn full_pipeline_with_swap_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = generate(dir.path());
    let out = dir.path().join("run");
    let c = |cmd: &[&str]| -> String {
        let mut args = vec!["--config", cfg.as_str()];
        args.extend_from_slice(cmd);
        ok(&args)
    };

    c(&["warmup"]);
    c(&["train"]);
    let swap = c(&[
        "swap-memory",
        "--remove",
        "source",
        "--add",
        out.join("task/target-corpus.jsonl").to_str().unwrap(),
    ]);
    assert!(swap.contains("unchanged"));
    let record = json(&out.join("memory-swapped/swap.json"));
    assert_eq!(record["data"]["checksums_before"], record["data"]["checksums_after"]);
    let end = json(&out.join("models/end.json"));
    assert!(end["data"]["params"].is_object());

    c(&["evaluate"]);
    let report = json(&out.join("report.json"));
    let ndcg = report["data"]["mean_ndcg"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ndcg));

    // Planted oracle: every query ranks exactly its judged documents.
    let qrels = std::fs::read_to_string(out.join("task/test-qrels.tsv")).unwrap();
    let mut oracle: std::collections::BTreeMap<&str, Vec<&str>> = Default::default();
    for line in qrels.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        oracle.entry(cols[0]).or_default().push(cols[1]);
    }
    let rows: String = oracle
        .iter()
        .map(|(q, docs)| {
            let ranking: Vec<Value> = docs
                .iter()
                .enumerate()
                .map(|(i, d)| serde_json::json!({"doc_id": d, "score": -(i as f64)}))
                .collect();
            serde_json::json!({"query_id": q, "ranking": ranking}).to_string() + "\n"
        })
        .collect();
    let oracle_path = dir.path().join("oracle.jsonl");
    std::fs::write(&oracle_path, rows).unwrap();
    c(&["evaluate", "--run", oracle_path.to_str().unwrap()]);
    assert_eq!(json(&out.join("report.json"))["data"]["mean_ndcg"].as_f64(), Some(1.0));

    c(&["retrieve"]);
    let run = std::fs::read_to_string(out.join("run.jsonl")).unwrap();
    assert_eq!(run.lines().count(), oracle.len());
    c(&["evaluate", "--run", out.join("run.jsonl").to_str().unwrap()]);
    let replayed = json(&out.join("report.json"))["data"]["mean_ndcg"].as_f64().unwrap();
    assert!((replayed - ndcg).abs() < 1e-12);

    c(&["inspect-attention", "--limit", "2"]);
    let att = std::fs::read_to_string(out.join("attention.jsonl")).unwrap();
    assert_eq!(att.lines().count(), 2);
    c(&["bm25-baseline"]);
    c(&["build-index"]);

    // Every artifact carries the same stamp.
    let hash = report["stamp"]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for line in std::fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["config_hash"], hash.as_str());
        assert_eq!(v["seed"], 0);
        assert!(v["version"].as_str().unwrap().starts_with('v'));
    }
    for file in ["episodes.json", "timing.json", "vocab.json", "warmup/end.json", "bm25-report.json"] {
        assert_eq!(json(&out.join(file))["stamp"]["config_hash"], hash.as_str(), "{file}");
    }
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.starts_with(&format!("# config_hash={hash} seed=0 ")));
}

#[test]
fn reruns_reproduce_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = generate(dir.path());
    let out = dir.path().join("run");
    let read = |f: &str| std::fs::read(out.join(f)).unwrap();
    ok(&["--config", &cfg, "warmup"]);
    ok(&["--config", &cfg, "train"]);
    let first = (read("metrics.jsonl"), read("episodes.json"), read("warmup/metrics.jsonl"));
    ok(&["--config", &cfg, "warmup"]);
    ok(&["--config", &cfg, "train"]);
    assert_eq!(first, (read("metrics.jsonl"), read("episodes.json"), read("warmup/metrics.jsonl")));
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = generate(dir.path());
    let mut v = json(Path::new(&cfg));
    v["train"]["batch_size"] = 0.into();
    let bad = dir.path().join("run/bad.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let out = moma(&["--config", bad.to_str().unwrap(), "warmup"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch_size"));

    v["train"]["batch_size"] = 8.into();
    v["target"]["corpus"] = "missing.jsonl".into();
    std::fs::write(&bad, v.to_string()).unwrap();
    let out = moma(&["--config", bad.to_str().unwrap(), "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("target.corpus"));

    let out = moma(&["warmup"]);
    assert!(!out.status.success());
    let out = moma(&["--config", &cfg, "train"]);
    assert!(!out.status.success(), "train without warm-up must fail");
}
