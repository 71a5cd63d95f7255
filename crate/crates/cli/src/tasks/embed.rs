//! Embedding fetch (service or offline hashing) and nearest-neighbor lookup.

use ontolearn::corpus::parse_documents;
use ontolearn::embedstore::{fetch_embeddings, knn as knn_search, FetchOptions, Neighbor, Pooling};
use ontolearn::zeroshot::{apply_template, TemplateStyle, TextRole};
use serde::{Deserialize, Serialize};

use super::io::{load_store, read_lines, read_text};
use super::{service, Out};
use crate::config::Resolved;
use crate::error::RunError;
use crate::mock;

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Term,
    Type,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateParams {
    #[serde(flatten)]
    style: TemplateStyle,
    role: Role,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedParams {
    #[serde(default)]
    model: String,
    #[serde(default = "default_batch")]
    batch_size: usize,
    #[serde(default = "default_pooling")]
    pooling: Pooling,
    #[serde(default = "yes")]
    normalize: bool,
    #[serde(default)]
    template: Option<TemplateParams>,
    /// Dimension of the offline hashing embedder.
    #[serde(default = "default_mock_dim")]
    mock_dim: usize,
    #[serde(default = "default_output")]
    output: String,
}

fn default_batch() -> usize {
    FetchOptions::DEFAULT_BATCH_SIZE
}

fn default_pooling() -> Pooling {
    Pooling::LastToken
}

fn yes() -> bool {
    true
}

fn default_mock_dim() -> usize {
    mock::DEFAULT_DIM
}

fn default_output() -> String {
    "embeddings.emb".into()
}

#[derive(Deserialize)]
struct TextRow {
    id: String,
    text: String,
}

/// (id, text) pairs from whichever single source path is configured.
fn embed_inputs(run: &Resolved) -> Result<Vec<(String, String)>, RunError> {
    let sources: Vec<&str> = ["texts", "documents", "terms", "types"]
        .into_iter()
        .filter(|k| run.opt_path(k).is_some())
        .collect();
    let [source] = sources.as_slice() else {
        return Err(RunError::Config(
            "paths: embed-fetch needs exactly one of texts, documents, terms, types".into(),
        ));
    };
    let path = run.path(source);
    Ok(match *source {
        "texts" => read_text(path)?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<TextRow>(l)
                    .map(|r| (r.id, r.text))
                    .map_err(|e| RunError::data_in(path, format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<_, _>>()?,
        "documents" => parse_documents(&read_text(path)?)
            .map_err(|e| RunError::data_in(path, e))?
            .into_iter()
            .map(|d| (d.id, format!("{}\n{}", d.title, d.text)))
            .collect(),
        _ => read_lines(path)?.into_iter().map(|t| (t.clone(), t)).collect(),
    })
}

pub fn embed_fetch(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let p: EmbedParams = run.params()?;
    if p.batch_size == 0 {
        return Err(RunError::Config("params.batch_size must be ≥ 1".into()));
    }
    let mut inputs = embed_inputs(run)?;
    if let Some(t) = &p.template {
        let role = match t.role {
            Role::Term => TextRole::Term,
            Role::Type => TextRole::Type,
        };
        for (_, text) in &mut inputs {
            *text = apply_template(text, &t.style, role)?;
        }
    }
    let store = if run.config.mock_llm {
        let model = if p.model.is_empty() { "hashing" } else { &p.model };
        mock::hash_store(model, &inputs, p.mock_dim, p.pooling, p.normalize)?
    } else {
        if p.model.is_empty() {
            return Err(RunError::Config(
                "params.model is required for the embeddings service".into(),
            ));
        }
        let client = service(run, "embeddings")?;
        let opts = FetchOptions {
            model_name: p.model.clone(),
            batch_size: p.batch_size,
            pooling: p.pooling,
            normalize: p.normalize,
            dim_hint: None,
        };
        fetch_embeddings(&client, &inputs, &opts)?
    };
    out.bytes(&p.output, &store.to_bytes())?;
    out.log.stat("rows", store.len());
    out.log.stat("dim", store.dim());
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KnnParams {
    #[serde(default = "default_k")]
    k: usize,
    /// Skip a neighbor whose id equals the query id.
    #[serde(default)]
    exclude_self: bool,
}

fn default_k() -> usize {
    ontolearn::fewshot::K_RETRIEVAL
}

#[derive(Serialize)]
struct NeighborRow<'a> {
    id: &'a str,
    neighbors: Vec<Neighbor>,
}

pub fn knn(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let p: KnnParams = run.params()?;
    if p.k == 0 {
        return Err(RunError::Config("params.k must be ≥ 1".into()));
    }
    let store = load_store(run.path("store"))?;
    let queries = load_store(run.path("queries"))?;
    let mut rows = Vec::with_capacity(queries.len());
    for (id, v) in queries.rows() {
        let extra = usize::from(p.exclude_self);
        let mut hits = knn_search(&store, v, p.k + extra)?;
        if p.exclude_self {
            hits.retain(|n| n.id != id);
        }
        hits.truncate(p.k);
        rows.push(NeighborRow { id, neighbors: hits });
    }
    out.jsonl("neighbors.jsonl", &rows)?;
    out.log.stat("queries", rows.len());
    Ok(())
}
