//! Shared fixtures for the command-line tests: a planted dataset on disk and
//! helpers to run the binary against generated configs.
#![allow(dead_code)]

#[path = "../../../core/tests/common/mod.rs"]
pub mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

pub const TYPES: [&str; 6] = ["material", "device", "process", "property", "phenomenon", "method"];
pub const TRAIN_DOCS: usize = 15;
pub const TRAIN_TERMS: usize = 40;

/// Exit code and stderr of one run.
pub struct Ran {
    pub code: i32,
    pub stderr: String,
}

/// Run the CLI: the built binary when this test target has one, otherwise
/// in-process through the library entry point.
pub fn invoke(args: &[&std::ffi::OsStr]) -> Ran {
    match option_env!("CARGO_BIN_EXE_ontolearn") {
        Some(exe) => {
            let out = Command::new(exe)
                .args(args)
                .env_remove("ONTOLEARN_ENDPOINT")
                .env_remove("ONTOLEARN_API_KEY")
                .output()
                .unwrap();
            Ran {
                code: out.status.code().expect("exited normally"),
                stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
            }
        }
        None => {
            let argv = std::iter::once(std::ffi::OsStr::new("ontolearn")).chain(args.iter().copied());
            Ran {
                code: i32::from(ontolearn_cli::run_cli(argv)),
                stderr: String::new(),
            }
        }
    }
}

/// Write `config` as `<name>.json` in `dir` and run it.
pub fn run(dir: &Path, name: &str, config: Value, extra: &[&str]) -> Ran {
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let mut args = vec![std::ffi::OsStr::new("--config"), path.as_os_str()];
    args.extend(extra.iter().map(std::ffi::OsStr::new));
    invoke(&args)
}

pub fn code(out: &Ran) -> i32 {
    out.code
}

pub fn stderr(out: &Ran) -> String {
    out.stderr.clone()
}

/// Assert success, showing stderr otherwise.
pub fn ok(out: Ran) -> Ran {
    assert_eq!(out.code, 0, "{}", out.stderr);
    out
}

fn jsonl(rows: &[Value]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
}

fn type_of(term_index: usize) -> &'static str {
    TYPES[term_index % TYPES.len()]
}

/// Planted corpus split into training and test documents, 40 typed training
/// terms and 10 held-out test terms. Returns the planted term index.
pub fn write_dataset(dir: &Path) -> std::collections::BTreeMap<String, std::collections::BTreeSet<String>> {
    let (docs, truth) = common::planted_corpus();
    let terms = common::planted_terms();
    let doc_rows: Vec<Value> = docs
        .iter()
        .map(|d| json!({"id": d.id, "title": d.title, "text": d.text}))
        .collect();
    fs::write(dir.join("documents.jsonl"), jsonl(&doc_rows[..TRAIN_DOCS])).unwrap();
    fs::write(dir.join("test_documents.jsonl"), jsonl(&doc_rows[TRAIN_DOCS..])).unwrap();
    fs::write(dir.join("all_documents.jsonl"), jsonl(&doc_rows)).unwrap();
    fs::write(dir.join("terms.txt"), terms.join("\n") + "\n").unwrap();
    fs::write(dir.join("types.txt"), TYPES.join("\n") + "\n").unwrap();
    fs::write(dir.join("test_terms.txt"), terms[TRAIN_TERMS..].join("\n") + "\n").unwrap();
    let t2t: serde_json::Map<String, Value> = terms[..TRAIN_TERMS]
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), json!([type_of(i)])))
        .collect();
    fs::write(
        dir.join("terms2types.json"),
        serde_json::to_string_pretty(&t2t).unwrap(),
    )
    .unwrap();
    let gold: Vec<Value> = terms[TRAIN_TERMS..]
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"term": t, "types": [type_of(TRAIN_TERMS + i)]}))
        .collect();
    fs::write(dir.join("test_typing.gold.jsonl"), jsonl(&gold)).unwrap();
    truth
}

/// Offline embedding of one source file into `out/<store>`.
pub fn embed(dir: &Path, name: &str, source: (&str, &str), out: &str) -> PathBuf {
    ok(run(
        dir,
        name,
        json!({"task": "embed-fetch", "seed": 7, "out": out, "paths": {source.0: source.1}, "params": {}}),
        &["--mock-llm"],
    ));
    dir.join(out).join("embeddings.emb")
}

/// Full offline Task A: document embeddings then retrieval-augmented
/// extraction. Returns the prompt-a output directory.
pub fn task_a(dir: &Path, tag: &str) -> PathBuf {
    embed(
        dir,
        &format!("{tag}_docs"),
        ("documents", "all_documents.jsonl"),
        &format!("{tag}/doc_store"),
    );
    let out = format!("{tag}/prompt_a");
    ok(run(
        dir,
        &format!("{tag}_prompt_a"),
        json!({
            "task": "prompt-a",
            "seed": 7,
            "out": out,
            "paths": {
                "documents": "documents.jsonl",
                "terms": "terms.txt",
                "types": "types.txt",
                "terms2types": "terms2types.json",
                "test_documents": "test_documents.jsonl",
                "doc_store": format!("{tag}/doc_store/embeddings.emb"),
            },
            "params": {"method": "m2"},
        }),
        &["--mock-llm"],
    ));
    dir.join(out)
}

/// Full offline Task B: term embeddings then few-shot typing. Returns the
/// prompt-b output directory.
pub fn task_b(dir: &Path, tag: &str) -> PathBuf {
    embed(
        dir,
        &format!("{tag}_terms"),
        ("terms", "terms.txt"),
        &format!("{tag}/term_store"),
    );
    let out = format!("{tag}/prompt_b");
    ok(run(
        dir,
        &format!("{tag}_prompt_b"),
        json!({
            "task": "prompt-b",
            "seed": 7,
            "out": out,
            "paths": {
                "terms2types": "terms2types.json",
                "test_terms": "test_terms.txt",
                "term_store": format!("{tag}/term_store/embeddings.emb"),
            },
            "params": {},
        }),
        &["--mock-llm"],
    ));
    dir.join(out)
}

/// Manifest with the volatile timestamp removed.
pub fn manifest_sans_timestamp(out_dir: &Path) -> Value {
    let mut m: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    m.as_object_mut().unwrap().remove("timestamp");
    m
}
