//! Per-run manifest: config echo, input and output digests, version, seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Resolved;
use crate::error::RunError;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, RunError> {
        let data = std::fs::read(path).map_err(|e| RunError::data_in(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            bytes: data.len() as u64,
            sha256: hex::encode(Sha256::digest(&data)),
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub task: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub stats: BTreeMap<String, serde_json::Value>,
    pub timestamp: String,
}

/// Files written and counters gathered while a task runs.
#[derive(Debug, Default)]
pub struct RunLog {
    outputs: Vec<PathBuf>,
    inputs: BTreeMap<String, PathBuf>,
    pub stats: BTreeMap<String, serde_json::Value>,
}

impl RunLog {
    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    /// Record an input that was not named in `paths` (e.g. ensemble stores).
    pub fn extra_input(&mut self, key: String, path: PathBuf) {
        self.inputs.insert(key, path);
    }

    pub fn stat(&mut self, key: &str, value: impl Serialize) {
        self.stats
            .insert(key.to_string(), serde_json::to_value(value).expect("stats serialize"));
    }
}

pub fn write_manifest(run: &Resolved, log: RunLog) -> Result<PathBuf, RunError> {
    let mut inputs = BTreeMap::new();
    for (key, path) in run.input_paths().iter().chain(&log.inputs) {
        inputs.insert(key.clone(), FileDigest::of(path)?);
    }
    let outputs = log
        .outputs
        .iter()
        .map(|p| FileDigest::of(p))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest {
        tool: "ontolearn",
        version: env!("CARGO_PKG_VERSION"),
        task: run.task().name(),
        seed: run.seed(),
        config: serde_json::to_value(&run.config).expect("config serializes"),
        inputs,
        outputs,
        stats: log.stats,
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    let path = run.out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| RunError::data_in(&path, e))?;
    Ok(path)
}
