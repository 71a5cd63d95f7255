//! Run configuration: one JSON file per run, with a few flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Repair,
    Tfidf,
    EmbedFetch,
    Knn,
    PromptA,
    PromptB,
    Zeroshot,
    Ensemble,
    Distmult,
    TaxoTrain,
    TaxoGrid,
    TaxoPredict,
    Eval,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Repair => "repair",
            Task::Tfidf => "tfidf",
            Task::EmbedFetch => "embed-fetch",
            Task::Knn => "knn",
            Task::PromptA => "prompt-a",
            Task::PromptB => "prompt-b",
            Task::Zeroshot => "zeroshot",
            Task::Ensemble => "ensemble",
            Task::Distmult => "distmult",
            Task::TaxoTrain => "taxo-train",
            Task::TaxoGrid => "taxo-grid",
            Task::TaxoPredict => "taxo-predict",
            Task::Eval => "eval",
        }
    }

    /// (required, optional) keys of the `paths` block.
    fn path_keys(self) -> (&'static [&'static str], &'static [&'static str]) {
        const CORPUS: &[&str] = &["documents", "terms", "types"];
        const CORPUS_OPT: &[&str] = &["terms2types", "terms2docs"];
        const TAXO: &[&str] = &["taxonomy", "type_store"];
        match self {
            Task::Repair => (CORPUS, CORPUS_OPT),
            Task::Tfidf => (&["documents"], &[]),
            Task::EmbedFetch => (&[], &["texts", "documents", "terms", "types"]),
            Task::Knn => (&["store", "queries"], &[]),
            Task::PromptA => (
                &["documents", "terms", "types", "test_documents", "doc_store"],
                &["terms2types", "terms2docs", "term_store"],
            ),
            Task::PromptB => (&["terms2types", "test_terms", "term_store"], &[]),
            Task::Zeroshot | Task::Distmult => (&["term_store", "type_store", "test_terms"], &[]),
            Task::Ensemble => (&["test_terms"], &[]),
            Task::TaxoTrain | Task::TaxoGrid => (TAXO, &["types"]),
            Task::TaxoPredict => (&["checkpoint", "type_store", "types"], &["summary"]),
            Task::Eval => (&["predicted", "gold"], &[]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible service, e.g. `http://host:8000/v1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub mock_llm: bool,
    #[serde(default)]
    pub paths: BTreeMap<String, PathBuf>,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

/// Command-line overrides, applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub endpoint: Option<String>,
    pub mock_llm: bool,
    pub out: Option<PathBuf>,
}

/// A validated config with paths resolved against the config directory.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub api_key: Option<String>,
    paths: BTreeMap<String, PathBuf>,
}

impl Resolved {
    pub fn load(config_path: &Path, overrides: Overrides, api_key: Option<String>) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(config_path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", config_path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", config_path.display())))?;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if overrides.endpoint.is_some() {
            config.endpoint = overrides.endpoint;
        }
        config.mock_llm |= overrides.mock_llm;
        if !config.params.is_object() {
            return Err(RunError::Config("params must be a JSON object".into()));
        }

        let base = config_path.parent().unwrap_or(Path::new("")).to_path_buf();
        let (required, optional) = config.task.path_keys();
        for key in required {
            if !config.paths.contains_key(*key) {
                return Err(RunError::Config(format!(
                    "paths.{key} is required for task {}",
                    config.task.name()
                )));
            }
        }
        let mut paths = BTreeMap::new();
        for (key, rel) in &config.paths {
            if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
                return Err(RunError::Config(format!(
                    "paths.{key} is not used by task {}",
                    config.task.name()
                )));
            }
            let full = base.join(rel);
            if !full.exists() {
                return Err(RunError::Config(format!(
                    "paths.{key}: {} does not exist",
                    full.display()
                )));
            }
            paths.insert(key.clone(), full);
        }
        let out_dir = match (overrides.out, &config.out) {
            (Some(o), _) => o,
            (None, Some(o)) => base.join(o),
            (None, None) => base.join("out"),
        };
        config.out = Some(out_dir.clone());
        Ok(Self {
            config,
            config_path: config_path.to_path_buf(),
            out_dir,
            api_key,
            paths,
        })
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// A path the task declared as required.
    pub fn path(&self, key: &str) -> &Path {
        self.paths
            .get(key)
            .map(PathBuf::as_path)
            .unwrap_or_else(|| panic!("paths.{key} validated as required"))
    }

    pub fn opt_path(&self, key: &str) -> Option<&Path> {
        self.paths.get(key).map(PathBuf::as_path)
    }

    pub fn input_paths(&self) -> &BTreeMap<String, PathBuf> {
        &self.paths
    }

    /// Resolve a path named inside `params` (e.g. ensemble member stores).
    pub fn param_path(&self, field: &str, rel: &Path) -> Result<PathBuf, RunError> {
        let full = self.config_path.parent().unwrap_or(Path::new("")).join(rel);
        if !full.exists() {
            return Err(RunError::Config(format!(
                "params.{field}: {} does not exist",
                full.display()
            )));
        }
        Ok(full)
    }

    /// Decode the `params` block into the task's parameter type.
    pub fn params<P: DeserializeOwned>(&self) -> Result<P, RunError> {
        serde_json::from_value(self.config.params.clone()).map_err(|e| RunError::Config(format!("params: {e}")))
    }

    pub fn endpoint_url(&self, suffix: &str) -> Option<String> {
        self.config
            .endpoint
            .as_ref()
            .map(|base| format!("{}/{suffix}", base.trim_end_matches('/')))
    }
}
