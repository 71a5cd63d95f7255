//! End-to-end runs of the `ontolearn` binary on generated fixtures.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ontolearn::embedstore::{read_store, write_store};
use ontolearn::taxo::EdgeRecord;
use serde_json::{json, Value};
use support::common::http::dead_endpoint;
use support::common::{planted_taxonomy, random_store};
use support::{code, ok, run, stderr, write_dataset};

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn repair_config() -> Value {
    json!({
        "task": "repair",
        "seed": 1,
        "paths": {"documents": "documents.jsonl", "terms": "terms.txt", "types": "types.txt"},
        "params": {},
    })
}

#[test]
fn repair_recovers_the_planted_index() {
    let dir = tempfile::tempdir().unwrap();
    let truth = write_dataset(dir.path());
    // score the whole planted corpus, not only the training split
    let mut cfg = repair_config();
    cfg["paths"]["documents"] = json!("all_documents.jsonl");
    ok(run(dir.path(), "repair", cfg, &[]));
    let got: BTreeMap<String, BTreeSet<String>> =
        serde_json::from_value(read_json(&dir.path().join("out/terms2docs.repaired.json"))).unwrap();
    assert_eq!(got, truth);
}

#[test]
fn identical_runs_give_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let mut cfg = repair_config();
    cfg["paths"]["terms2types"] = json!("terms2types.json");
    ok(run(dir.path(), "repair", cfg.clone(), &[]));
    let first = support::manifest_sans_timestamp(&dir.path().join("out"));
    ok(run(dir.path(), "repair", cfg, &[]));
    let second = support::manifest_sans_timestamp(&dir.path().join("out"));
    assert_eq!(first, second);
    assert_eq!(first["seed"], 1);
    assert_eq!(first["inputs"].as_object().unwrap().len(), 4);
    assert_eq!(first["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let elsewhere = dir.path().join("elsewhere");
    ok(run(
        dir.path(),
        "repair",
        repair_config(),
        &["--seed", "42", "--out", elsewhere.to_str().unwrap()],
    ));
    let m = support::manifest_sans_timestamp(&dir.path().join("elsewhere"));
    assert_eq!(m["seed"], 42);
    assert_eq!(m["config"]["seed"], 42);
}

#[test]
fn missing_and_unknown_paths_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let mut cfg = repair_config();
    cfg["paths"].as_object_mut().unwrap().remove("terms");
    let out = run(dir.path(), "missing", cfg, &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("paths.terms"), "{}", stderr(&out));

    let mut cfg = repair_config();
    cfg["paths"]["checkpoint"] = json!("terms.txt");
    let out = run(dir.path(), "unknown", cfg, &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("paths.checkpoint"));

    let mut cfg = repair_config();
    cfg["paths"]["terms"] = json!("nope.txt");
    let out = run(dir.path(), "absent", cfg, &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nope.txt"));

    let mut cfg = repair_config();
    cfg["params"] = json!({"bogus": 1});
    assert_eq!(code(&run(dir.path(), "params", cfg, &[])), 1);
}

#[test]
fn malformed_documents_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    fs::write(
        dir.path().join("documents.jsonl"),
        "{\"id\": \"d1\", \"title\": \"t\"}\n",
    )
    .unwrap();
    let out = run(dir.path(), "repair", repair_config(), &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("text"), "{}", stderr(&out));
}

#[test]
fn unreachable_service_is_a_service_error() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let cfg = json!({
        "task": "embed-fetch",
        "paths": {"terms": "terms.txt"},
        "params": {"model": "encoder"},
    });
    let endpoint = dead_endpoint();
    let out = run(dir.path(), "embed", cfg.clone(), &["--endpoint", &endpoint]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    // no endpoint at all is a configuration problem
    assert_eq!(code(&run(dir.path(), "embed", cfg, &[])), 1);
}

#[test]
fn taxo_train_rejects_zero_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let graph = planted_taxonomy(12, 2);
    fs::write(
        dir.path().join("taxonomy.json"),
        serde_json::to_string(&graph.to_records()).unwrap(),
    )
    .unwrap();
    write_store(&random_store(graph.types(), 8, 1), dir.path().join("types.emb")).unwrap();
    let out = run(
        dir.path(),
        "train",
        json!({
            "task": "taxo-train",
            "paths": {"taxonomy": "taxonomy.json", "type_store": "types.emb"},
            "params": {"epochs": 0},
        }),
        &[],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("epochs must be ≥ 1"), "{}", stderr(&out));
}

#[test]
fn offline_task_a_is_schema_valid_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let a = support::task_a(dir.path(), "r1");
    let b = support::task_a(dir.path(), "r2");
    for name in ["terms.txt", "types.txt", "predictions.jsonl", "prompts.jsonl"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let terms = fs::read_to_string(a.join("terms.txt")).unwrap();
    assert!(!terms.is_empty());
    assert!(terms.lines().all(|l| !l.trim().is_empty()));
    let preds = read_jsonl(&a.join("predictions.jsonl"));
    assert_eq!(preds.len(), 20 - support::TRAIN_DOCS);
    for p in &preds {
        assert!(p["terms"].is_array() && p["types"].is_array());
        assert_eq!(p["neighbors"].as_array().unwrap().len(), 3);
        assert_eq!(p["parsed"], true);
    }
}

#[test]
fn offline_task_b_is_schema_valid_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let a = support::task_b(dir.path(), "r1");
    let b = support::task_b(dir.path(), "r2");
    assert_eq!(
        fs::read(a.join("typing.jsonl")).unwrap(),
        fs::read(b.join("typing.jsonl")).unwrap()
    );
    let rows = read_jsonl(&a.join("typing.jsonl"));
    assert_eq!(rows.len(), 10);
    for r in &rows {
        assert!(r["term"].is_string());
        let types = r["types"].as_array().unwrap();
        assert_eq!(types.len(), 1);
        assert!(support::TYPES.contains(&types[0].as_str().unwrap()));
    }
    // the neighbors never include the query term itself
    for p in read_jsonl(&a.join("prompts.jsonl")) {
        let user = p["user"].as_str().unwrap();
        let query = p["id"].as_str().unwrap();
        assert_eq!(user.matches(&format!("TERM: {query} →")).count(), 1, "{user}");
    }

    let eval = run(
        dir.path(),
        "eval",
        json!({
            "task": "eval",
            "out": "eval",
            "paths": {"predicted": "r1/prompt_b/typing.jsonl", "gold": "test_typing.gold.jsonl"},
            "params": {"kind": "typing", "dataset": "planted"},
        }),
        &[],
    );
    ok(eval);
    let report = read_json(&dir.path().join("eval/report.json"));
    let f1 = report[0]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert!(fs::read_to_string(dir.path().join("eval/report.txt"))
        .unwrap()
        .starts_with("dataset"));
}

#[test]
fn term_continuation_types_extracted_terms() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    support::embed(dir.path(), "docs", ("documents", "all_documents.jsonl"), "docs");
    support::embed(dir.path(), "terms", ("terms", "terms.txt"), "terms");
    ok(run(
        dir.path(),
        "a2",
        json!({
            "task": "prompt-a",
            "out": "a2",
            "paths": {
                "documents": "documents.jsonl", "terms": "terms.txt", "types": "types.txt",
                "terms2types": "terms2types.json", "test_documents": "test_documents.jsonl",
                "doc_store": "docs/embeddings.emb", "term_store": "terms/embeddings.emb",
            },
            "params": {"method": "m2", "types": "term_continuation"},
        }),
        &["--mock-llm"],
    ));
    let types = fs::read_to_string(dir.path().join("a2/types.txt")).unwrap();
    assert!(types.lines().all(|t| support::TYPES.contains(&t)), "{types}");
}

#[test]
fn zero_shot_typers_run_offline() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let terms = support::embed(dir.path(), "terms", ("terms", "terms.txt"), "terms");
    let types = support::embed(dir.path(), "types", ("types", "types.txt"), "types");
    let stores = json!({
        "term_store": "terms/embeddings.emb",
        "type_store": "types/embeddings.emb",
        "test_terms": "test_terms.txt",
    });
    for task in ["zeroshot", "distmult"] {
        ok(run(
            dir.path(),
            task,
            json!({"task": task, "out": task, "paths": stores, "params": {}}),
            &[],
        ));
        let rows = read_jsonl(&dir.path().join(task).join("typing.jsonl"));
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| !r["types"].as_array().unwrap().is_empty()));
    }
    let member =
        |name: &str| json!({"name": name, "term_store": "terms/embeddings.emb", "type_store": "types/embeddings.emb"});
    ok(run(
        dir.path(),
        "ensemble",
        json!({
            "task": "ensemble",
            "out": "ensemble",
            "paths": {"test_terms": "test_terms.txt"},
            "params": {"members": [member("a"), member("b")]},
        }),
        &[],
    ));
    for row in read_jsonl(&dir.path().join("ensemble/ensemble_members.jsonl")) {
        let w: f64 = row["members"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["weight"].as_f64().unwrap())
            .sum();
        assert!((w - 1.0).abs() < 1e-9);
    }
    // both member stores are hashed into the manifest
    let m = support::manifest_sans_timestamp(&dir.path().join("ensemble"));
    assert!(m["inputs"].as_object().unwrap().contains_key("members.b.type_store"));
    assert_eq!(read_store(&terms).unwrap().len(), 50);
    assert_eq!(read_store(&types).unwrap().len(), 6);
}

#[test]
fn tfidf_and_knn_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    ok(run(
        dir.path(),
        "tfidf",
        json!({"task": "tfidf", "out": "tfidf", "paths": {"documents": "documents.jsonl"}, "params": {"k": 5}}),
        &[],
    ));
    let rows = read_jsonl(&dir.path().join("tfidf/keywords.jsonl"));
    assert_eq!(rows.len(), support::TRAIN_DOCS);
    assert!(rows.iter().all(|r| r["keywords"].as_array().unwrap().len() <= 5));

    support::embed(dir.path(), "docs", ("documents", "documents.jsonl"), "docs");
    ok(run(
        dir.path(),
        "knn",
        json!({
            "task": "knn",
            "out": "knn",
            "paths": {"store": "docs/embeddings.emb", "queries": "docs/embeddings.emb"},
            "params": {"k": 2, "exclude_self": true},
        }),
        &[],
    ));
    for r in read_jsonl(&dir.path().join("knn/neighbors.jsonl")) {
        let n = r["neighbors"].as_array().unwrap();
        assert_eq!(n.len(), 2);
        assert!(n.iter().all(|x| x["id"] != r["id"]));
    }
}

fn taxo_fixture(dir: &Path) {
    let graph = planted_taxonomy(30, 3);
    let records: Vec<EdgeRecord> = graph.to_records();
    fs::write(dir.join("taxonomy.json"), serde_json::to_string(&records).unwrap()).unwrap();
    fs::write(dir.join("types.txt"), graph.types().join("\n")).unwrap();
    write_store(&random_store(graph.types(), 16, 5), dir.join("types.emb")).unwrap();
}

#[test]
fn taxonomy_train_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    taxo_fixture(dir.path());
    let train_params = json!({"learning_rate": 1.0, "batch_size": 8, "num_heads": 2, "epochs": 30, "holdout": false});
    ok(run(
        dir.path(),
        "train",
        json!({
            "task": "taxo-train",
            "seed": 3,
            "out": "train",
            "paths": {"taxonomy": "taxonomy.json", "type_store": "types.emb"},
            "params": train_params,
        }),
        &[],
    ));
    let summary = read_json(&dir.path().join("train/train_summary.json"));
    assert_eq!(summary["config"]["seed"], 3);
    assert!(summary["val_f1_threshold"].is_null());
    let density = summary["train_density"].as_f64().unwrap();
    assert!((density - 27.0 / 900.0).abs() < 1e-12);
    assert_eq!(
        read_json(&dir.path().join("train/history.json"))
            .as_array()
            .unwrap()
            .len(),
        30
    );

    let predict = |name: &str, threshold: Value| {
        ok(run(
            dir.path(),
            name,
            json!({
                "task": "taxo-predict",
                "out": name,
                "paths": {
                    "checkpoint": "train/head.ckpt", "type_store": "types.emb",
                    "types": "types.txt", "summary": "train/train_summary.json",
                },
                "params": {"threshold": threshold},
            }),
            &[],
        ));
        read_json(&dir.path().join(name).join("predicted_taxonomy.json"))
    };
    let sparse = predict("sparse", json!({"mode": "sparsity_matched"}));
    // round(27/900 · 900) edges
    assert_eq!(sparse.as_array().unwrap().len(), 27);
    let top = predict("top", json!({"mode": "top_k", "k": 5}));
    assert_eq!(top.as_array().unwrap().len(), 5);
    let none = predict("none", json!({"mode": "fixed", "value": 1.0}));
    assert!(none.as_array().unwrap().is_empty());
    let out = run(
        dir.path(),
        "valf1",
        json!({
            "task": "taxo-predict",
            "paths": {"checkpoint": "train/head.ckpt", "type_store": "types.emb", "types": "types.txt",
                      "summary": "train/train_summary.json"},
            "params": {"threshold": {"mode": "val_f1"}},
        }),
        &[],
    );
    assert_eq!(code(&out), 1, "a holdout-free run has no validation threshold");

    ok(run(
        dir.path(),
        "eval",
        json!({
            "task": "eval",
            "out": "eval",
            "paths": {"predicted": "sparse/predicted_taxonomy.json", "gold": "taxonomy.json"},
            "params": {"kind": "edges"},
        }),
        &[],
    ));
    let report = read_json(&dir.path().join("eval/report.json"));
    assert_eq!(report[0]["metric"], "edges");
    let p = report[0]["precision"].as_f64().unwrap();
    let r = report[0]["recall"].as_f64().unwrap();
    assert_eq!(p, r, "as many predicted edges as gold edges");
}

#[test]
fn grid_search_writes_a_ranked_leaderboard() {
    let dir = tempfile::tempdir().unwrap();
    taxo_fixture(dir.path());
    ok(run(
        dir.path(),
        "grid",
        json!({
            "task": "taxo-grid",
            "seed": 2,
            "paths": {"taxonomy": "taxonomy.json", "type_store": "types.emb"},
            "params": {
                "batch_size": 8, "num_heads": 2, "epochs": 5,
                "grid": {"learning_rates": [0.01, 1.0], "num_heads": [1, 2]},
            },
        }),
        &[],
    ));
    let board = read_json(&dir.path().join("out/leaderboard.json"));
    let rows = board.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let aucs: Vec<f64> = rows
        .iter()
        .map(|r| r["val_auc"].as_f64().unwrap_or(f64::NEG_INFINITY))
        .collect();
    assert!(aucs.windows(2).all(|w| w[0] >= w[1]));
    let summary = read_json(&dir.path().join("out/train_summary.json"));
    assert_eq!(summary["config"]["learning_rate"], rows[0]["learning_rate"]);
    assert!(summary["val_f1_threshold"].is_number());

    ok(run(
        dir.path(),
        "predict",
        json!({
            "task": "taxo-predict",
            "out": "pred",
            "paths": {"checkpoint": "out/head.ckpt", "type_store": "types.emb", "types": "types.txt",
                      "summary": "out/train_summary.json"},
            "params": {},
        }),
        &[],
    ));
}
