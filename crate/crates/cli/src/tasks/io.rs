//! File helpers with errors that name the offending file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ontolearn::embedstore::{read_store, EmbeddingStore};
use ontolearn::text::dedup_first_casing;
use serde::Serialize;

use crate::error::RunError;
use crate::manifest::RunLog;

pub fn read_text(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|e| RunError::data_in(path, e))
}

/// Non-empty trimmed lines, deduplicated case-insensitively.
pub fn read_lines(path: &Path) -> Result<Vec<String>, RunError> {
    Ok(dedup_first_casing(read_text(path)?.lines()))
}

/// A JSON object mapping names to string arrays, in file order.
pub fn read_string_map(path: &Path) -> Result<IndexMap<String, BTreeSet<String>>, RunError> {
    let raw: IndexMap<String, Vec<String>> =
        serde_json::from_str(&read_text(path)?).map_err(|e| RunError::data_in(path, e))?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| {
            (
                k.trim().to_string(),
                v.into_iter().map(|s| s.trim().to_string()).collect(),
            )
        })
        .collect())
}

pub fn load_store(path: &Path) -> Result<EmbeddingStore, RunError> {
    read_store(path).map_err(|e| RunError::data_in(path, e))
}

/// Rows of `store` for `ids`, failing on the first id without a vector.
pub fn vector<'a>(store: &'a EmbeddingStore, id: &str, what: &Path) -> Result<&'a [f32], RunError> {
    store
        .get(id)
        .ok_or_else(|| RunError::data_in(what, format!("no embedding for {id:?}")))
}

pub struct Out<'a> {
    pub dir: &'a Path,
    pub log: &'a mut RunLog,
}

impl Out<'_> {
    fn target(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.log.output(path.clone());
        path
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> Result<(), RunError> {
        let path = self.target(name);
        std::fs::write(&path, data).map_err(|e| RunError::data_in(&path, e))
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), RunError> {
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(row).expect("outputs serialize"));
            text.push('\n');
        }
        self.bytes(name, text.as_bytes())
    }

    pub fn lines(&mut self, name: &str, items: &[String]) -> Result<(), RunError> {
        let mut text = String::new();
        for item in items {
            text.push_str(item);
            text.push('\n');
        }
        self.bytes(name, text.as_bytes())
    }
}
