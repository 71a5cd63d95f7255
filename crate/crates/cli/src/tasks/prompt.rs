//! Retrieval-augmented prompting: term/type extraction from documents and
//! few-shot term typing.

use std::collections::{BTreeSet, HashMap};

use ontolearn::corpus::{load_corpus, parse_documents, repair_term_doc_index, TermDocIndex, TfidfIndex};
use ontolearn::embedstore::{fetch_embeddings, knn, l2_normalize, EmbeddingStore, FetchOptions};
use ontolearn::fewshot::{
    aggregate_results, build_prompt_task_a, build_prompt_task_b, parse_structured_output, CompletionBackend,
    DecodeParams, ExtractionContext, ExtractionResult, Method, Prompt, PromptTemplates, KEYWORD_COUNT, K_RETRIEVAL,
};
use ontolearn::text::normalize;
use ontolearn::zeroshot::TypingRecord;
use serde::{Deserialize, Serialize};

use super::io::{load_store, read_lines, read_string_map, read_text, vector};
use super::text::corpus_paths;
use super::{completion_backend, service, Out};
use crate::config::Resolved;
use crate::error::RunError;
use crate::mock;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TypeMode {
    /// Terms and types come from one extraction call per document.
    #[default]
    Joint,
    /// Types come from few-shot typing prompts over the extracted terms.
    TermContinuation,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptAParams {
    #[serde(default = "default_method")]
    method: Method,
    #[serde(default)]
    model: String,
    #[serde(default)]
    temperature: f64,
    #[serde(default = "default_keywords")]
    keywords: usize,
    #[serde(default)]
    types: TypeMode,
    /// Model used to embed extracted terms missing from `term_store`.
    #[serde(default)]
    embedding_model: String,
    #[serde(default)]
    templates: PromptTemplates,
}

fn default_method() -> Method {
    Method::M2
}

fn default_keywords() -> usize {
    KEYWORD_COUNT
}

#[derive(Serialize)]
struct PromptRow<'a> {
    id: &'a str,
    system: &'a str,
    user: String,
}

impl<'a> PromptRow<'a> {
    fn new(id: &'a str, prompt: &'a Prompt) -> Self {
        Self {
            id,
            system: &prompt.system,
            user: prompt.render_user(),
        }
    }
}

#[derive(Serialize)]
struct DocPrediction {
    doc_id: String,
    neighbors: Vec<String>,
    demonstrations: usize,
    skipped_neighbors: usize,
    parsed: bool,
    terms: Vec<String>,
    types: Vec<String>,
}

/// Ask the backend and parse; unparseable answers count as empty.
fn ask(backend: &dyn CompletionBackend, prompt: &Prompt) -> Result<Option<ExtractionResult>, RunError> {
    let raw = backend.complete(prompt)?;
    match parse_structured_output(&raw, prompt.expected_schema) {
        Ok(r) => Ok(Some(r)),
        Err(e) => {
            log::warn!("{e}");
            Ok(None)
        }
    }
}

pub fn prompt_a(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let p: PromptAParams = run.params()?;
    let backend = completion_backend(
        run,
        &DecodeParams {
            model: p.model.clone(),
            temperature: p.temperature,
        },
    )?;
    let corpus = load_corpus(&corpus_paths(run))?;
    let test_path = run.path("test_documents");
    let test_docs = parse_documents(&read_text(test_path)?).map_err(|e| RunError::data_in(test_path, e))?;
    let store_path = run.path("doc_store");
    let doc_store = load_store(store_path)?;
    let train_ids: Vec<&str> = corpus.documents.iter().map(|d| d.id.as_str()).collect();
    let train_store = doc_store
        .select(&train_ids)
        .map_err(|e| RunError::data_in(store_path, e))?;

    let tfidf = TfidfIndex::new(&corpus);
    let index = match p.method {
        Method::M2 => repair_term_doc_index(&corpus),
        Method::M1 => TermDocIndex::default(),
    };
    let ctx = ExtractionContext {
        corpus: &corpus,
        index: &index,
        tfidf: &tfidf,
        templates: &p.templates,
    };

    let mut predictions = Vec::with_capacity(test_docs.len());
    let mut prompts = Vec::with_capacity(test_docs.len());
    let mut built_prompts = Vec::with_capacity(test_docs.len());
    for doc in &test_docs {
        let v = vector(&doc_store, &doc.id, store_path)?;
        let neighbors: Vec<String> = knn(&train_store, v, K_RETRIEVAL)?.into_iter().map(|n| n.id).collect();
        let keywords = tfidf.keywords(doc, p.keywords);
        let built = build_prompt_task_a(&ctx, doc, &keywords, &neighbors, p.method)?;
        let answer = ask(backend.as_ref(), &built.prompt)?;
        let parsed = answer.is_some();
        let answer = answer.unwrap_or_default();
        predictions.push(DocPrediction {
            doc_id: doc.id.clone(),
            neighbors,
            demonstrations: built.prompt.demonstrations.len(),
            skipped_neighbors: built.skipped,
            parsed,
            terms: answer.terms,
            types: answer.types,
        });
        built_prompts.push(built.prompt);
    }
    for (doc, prompt) in test_docs.iter().zip(&built_prompts) {
        prompts.push(PromptRow::new(&doc.id, prompt));
    }

    if p.types == TypeMode::TermContinuation {
        let typer = TermTyper::new(run, "term_store", &corpus.term_to_types, &p.embedding_model)?;
        let all_terms: Vec<String> = predictions.iter().flat_map(|d| d.terms.iter().cloned()).collect();
        let vectors = typer.vectors(run, &all_terms)?;
        for pred in &mut predictions {
            let mut types = Vec::new();
            for term in &pred.terms {
                let (_, answer) = typer.type_term(term, &vectors[term], backend.as_ref(), &p.templates)?;
                types.extend(answer.map(|a| a.types).unwrap_or_default());
            }
            pred.types = ExtractionResult::new(Vec::<String>::new(), types).types;
        }
    }

    let results: Vec<ExtractionResult> = predictions
        .iter()
        .map(|d| ExtractionResult {
            terms: d.terms.clone(),
            types: d.types.clone(),
        })
        .collect();
    let all = aggregate_results(&results);
    out.lines("terms.txt", &all.terms)?;
    out.lines("types.txt", &all.types)?;
    out.jsonl("predictions.jsonl", &predictions)?;
    out.jsonl("prompts.jsonl", &prompts)?;
    out.log.stat("documents", test_docs.len());
    out.log
        .stat("unparseable", predictions.iter().filter(|d| !d.parsed).count());
    out.log.stat("terms", all.terms.len());
    out.log.stat("types", all.types.len());
    Ok(())
}

/// Few-shot typing over a store of training-term embeddings.
struct TermTyper {
    store: EmbeddingStore,
    train: EmbeddingStore,
    types: HashMap<String, BTreeSet<String>>,
    embedding_model: String,
}

impl TermTyper {
    fn new(
        run: &Resolved,
        store_key: &str,
        term_to_types: &indexmap::IndexMap<String, BTreeSet<String>>,
        embedding_model: &str,
    ) -> Result<Self, RunError> {
        let path = run
            .opt_path(store_key)
            .ok_or_else(|| RunError::Config(format!("paths.{store_key} is required for term typing")))?;
        let store = load_store(path)?;
        let known: Vec<&str> = term_to_types
            .keys()
            .map(String::as_str)
            .filter(|t| store.position(t).is_some())
            .collect();
        let missing = term_to_types.len() - known.len();
        if missing > 0 {
            log::warn!("{missing} training terms have no embedding and cannot serve as demonstrations");
        }
        let train = store.select(&known).map_err(|e| RunError::data_in(path, e))?;
        if train.is_empty() {
            return Err(RunError::data_in(path, "no training term has an embedding"));
        }
        Ok(Self {
            store,
            train,
            types: term_to_types.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            embedding_model: embedding_model.to_string(),
        })
    }

    /// Vectors for `terms`: from the store when present, otherwise embedded
    /// with the offline hasher or the embeddings service.
    fn vectors(&self, run: &Resolved, terms: &[String]) -> Result<HashMap<String, Vec<f32>>, RunError> {
        let mut out = HashMap::new();
        let mut missing: Vec<(String, String)> = Vec::new();
        for t in terms {
            if out.contains_key(t) || missing.iter().any(|(id, _)| id == t) {
                continue;
            }
            match self.store.get(t) {
                Some(v) => {
                    out.insert(t.clone(), v.to_vec());
                }
                None => missing.push((t.clone(), t.clone())),
            }
        }
        if missing.is_empty() {
            return Ok(out);
        }
        let dim = self.store.dim();
        if run.config.mock_llm {
            for (id, text) in missing {
                let v = mock::hash_embed(&text, dim);
                let v = if self.store.l2_normalized() {
                    l2_normalize(&v)?
                } else {
                    v
                };
                out.insert(id, v);
            }
            return Ok(out);
        }
        if run.config.endpoint.is_none() {
            return Err(RunError::Data(format!(
                "no embedding for term {:?} and no service to embed it",
                missing[0].0
            )));
        }
        let model = if self.embedding_model.is_empty() {
            self.store.model_name().to_string()
        } else {
            self.embedding_model.clone()
        };
        let mut opts = FetchOptions::new(model);
        opts.pooling = self.store.pooling();
        opts.normalize = self.store.l2_normalized();
        let fetched = fetch_embeddings(&service(run, "embeddings")?, &missing, &opts)?;
        if fetched.dim() != dim {
            return Err(RunError::Data(format!(
                "service returned {}-dim vectors, term store has {dim}",
                fetched.dim()
            )));
        }
        for (id, v) in fetched.rows() {
            out.insert(id.to_string(), v.to_vec());
        }
        Ok(out)
    }

    /// Neighbors exclude the term itself so a training term cannot copy its
    /// own answer.
    fn type_term(
        &self,
        term: &str,
        v: &[f32],
        backend: &dyn CompletionBackend,
        templates: &PromptTemplates,
    ) -> Result<(Prompt, Option<ExtractionResult>), RunError> {
        let key = normalize(term);
        let neighbors: Vec<(String, BTreeSet<String>)> = knn(&self.train, v, K_RETRIEVAL + 1)?
            .into_iter()
            .filter(|n| normalize(&n.id) != key)
            .take(K_RETRIEVAL)
            .map(|n| {
                let types = self.types[&n.id].clone();
                (n.id, types)
            })
            .collect();
        let prompt = build_prompt_task_b(templates, term, &neighbors)?;
        let answer = ask(backend, &prompt)?;
        Ok((prompt, answer))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptBParams {
    #[serde(default)]
    model: String,
    #[serde(default)]
    temperature: f64,
    #[serde(default)]
    embedding_model: String,
    #[serde(default)]
    templates: PromptTemplates,
}

pub fn prompt_b(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let p: PromptBParams = run.params()?;
    let backend = completion_backend(
        run,
        &DecodeParams {
            model: p.model.clone(),
            temperature: p.temperature,
        },
    )?;
    let term_to_types = read_string_map(run.path("terms2types"))?;
    let test_terms = read_lines(run.path("test_terms"))?;
    let typer = TermTyper::new(run, "term_store", &term_to_types, &p.embedding_model)?;
    let vectors = typer.vectors(run, &test_terms)?;

    let mut records = Vec::with_capacity(test_terms.len());
    let mut prompt_rows = Vec::with_capacity(test_terms.len());
    let mut unparseable = 0;
    for term in &test_terms {
        let (prompt, answer) = typer.type_term(term, &vectors[term], backend.as_ref(), &p.templates)?;
        unparseable += usize::from(answer.is_none());
        records.push(TypingRecord {
            term: term.clone(),
            types: answer.map(|a| a.types).unwrap_or_default(),
        });
        prompt_rows.push((term.clone(), prompt));
    }
    let rows: Vec<PromptRow> = prompt_rows.iter().map(|(t, p)| PromptRow::new(t, p)).collect();
    out.jsonl("typing.jsonl", &records)?;
    out.jsonl("prompts.jsonl", &rows)?;
    out.log.stat("terms", records.len());
    out.log.stat("unparseable", unparseable);
    Ok(())
}
