//! Challenge corpus loading, term–document index repair, supervision tuples,
//! term/type overlap statistics and TF-IDF keywords.
//!
//! The shipped `terms2docs.json` maps *types* to document ids, not terms.
//! [`repair_term_doc_index`] rebuilds the term index by rescanning every
//! document for bounded, casefolded occurrences of each term.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{casefold, contains_bounded, normalize};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("missing field {field} at line {line}")]
    MissingField { field: &'static str, line: usize },
    #[error("duplicate document id {id:?} at line {line}")]
    DuplicateDocument { id: String, line: usize },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("document {doc_id:?} referenced by {key:?} does not exist")]
    UnknownDocument { key: String, doc_id: String },
    #[error("unknown document id {0:?}")]
    UnknownDocId(String),
    #[error("empty set: {0}")]
    EmptySet(&'static str),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// File set for one challenge dataset. Only `documents`, `terms` and
/// `types` are mandatory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub documents: PathBuf,
    pub terms: PathBuf,
    pub types: PathBuf,
    #[serde(default)]
    pub terms2types: Option<PathBuf>,
    #[serde(default)]
    pub terms2docs: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub terms: Vec<String>,
    pub types: Vec<String>,
    pub term_to_types: IndexMap<String, BTreeSet<String>>,
    /// Contents of `terms2docs.json`, which is keyed by type.
    pub raw_type_to_docs: IndexMap<String, BTreeSet<String>>,
    doc_index: HashMap<String, usize>,
}

impl Corpus {
    /// Assemble a corpus from in-memory parts, enforcing the same invariants
    /// as [`load_corpus`].
    pub fn new(
        documents: Vec<Document>,
        terms: Vec<String>,
        types: Vec<String>,
        term_to_types: IndexMap<String, BTreeSet<String>>,
        raw_type_to_docs: IndexMap<String, BTreeSet<String>>,
    ) -> Result<Self> {
        let mut doc_index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(CorpusError::MissingField {
                    field: "id",
                    line: i + 1,
                });
            }
            if doc_index.insert(doc.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateDocument {
                    id: doc.id.clone(),
                    line: i + 1,
                });
            }
        }
        for (key, ids) in &raw_type_to_docs {
            if let Some(missing) = ids.iter().find(|id| !doc_index.contains_key(*id)) {
                return Err(CorpusError::UnknownDocument {
                    key: key.clone(),
                    doc_id: missing.clone(),
                });
            }
        }
        let terms = dedup_lines(terms);
        let types = dedup_lines(types);

        let known: HashSet<&str> = terms.iter().map(String::as_str).collect();
        let before = term_to_types.len();
        let term_to_types: IndexMap<_, _> = term_to_types
            .into_iter()
            .filter(|(term, _)| known.contains(term.as_str()))
            .collect();
        if term_to_types.len() < before {
            log::warn!(
                "dropped {} terms2types entries whose term is not in the term list",
                before - term_to_types.len()
            );
        }

        Ok(Self {
            documents,
            terms,
            types,
            term_to_types,
            raw_type_to_docs,
            doc_index,
        })
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.doc_index.get(id).map(|&i| &self.documents[i])
    }

    /// Types whose `terms2docs` entry lists `doc_id`, sorted.
    pub fn raw_types_for_doc(&self, doc_id: &str) -> BTreeSet<String> {
        self.raw_type_to_docs
            .iter()
            .filter(|(_, docs)| docs.contains(doc_id))
            .map(|(ty, _)| ty.clone())
            .collect()
    }
}

fn dedup_lines(lines: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    lines
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .filter(|l| seen.insert(normalize(l)))
        .collect()
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse `documents.jsonl`. Blank lines are skipped; line numbers are 1-based.
pub fn parse_documents(content: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| CorpusError::MalformedLine {
            line,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::MalformedLine {
            line,
            message: "expected a JSON object".into(),
        })?;
        let field = |name: &'static str| -> Result<String> {
            match obj.get(name) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(CorpusError::MalformedLine {
                    line,
                    message: format!("field {name} is not a string"),
                }),
                None => Err(CorpusError::MissingField { field: name, line }),
            }
        };
        let doc = Document {
            id: field("id")?,
            title: field("title")?,
            text: field("text")?,
        };
        if doc.id.is_empty() {
            return Err(CorpusError::MissingField { field: "id", line });
        }
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateDocument { id: doc.id, line });
        }
        docs.push(doc);
    }
    Ok(docs)
}

fn read_string_map(path: &Path) -> Result<IndexMap<String, BTreeSet<String>>> {
    let content = read_to_string(path)?;
    let raw: IndexMap<String, Vec<String>> = serde_json::from_str(&content).map_err(|e| CorpusError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
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

pub fn load_corpus(paths: &CorpusPaths) -> Result<Corpus> {
    let documents = parse_documents(&read_to_string(&paths.documents)?)?;
    let terms = read_to_string(&paths.terms)?.lines().map(str::to_string).collect();
    let types = read_to_string(&paths.types)?.lines().map(str::to_string).collect();
    let term_to_types = match &paths.terms2types {
        Some(p) => read_string_map(p)?,
        None => IndexMap::new(),
    };
    let raw_type_to_docs = match &paths.terms2docs {
        Some(p) => read_string_map(p)?,
        None => IndexMap::new(),
    };
    Corpus::new(documents, terms, types, term_to_types, raw_type_to_docs)
}

/// Term → documents index rebuilt from the document text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermDocIndex {
    pub term_to_docs: IndexMap<String, BTreeSet<String>>,
}

impl TermDocIndex {
    pub fn docs_for(&self, term: &str) -> Option<&BTreeSet<String>> {
        self.term_to_docs.get(term)
    }

    /// Inverse view: doc id → terms found in it, both sorted.
    pub fn doc_to_terms(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (term, docs) in &self.term_to_docs {
            for doc in docs {
                out.entry(doc.as_str()).or_default().insert(term.as_str());
            }
        }
        out
    }
}

/// Rescan every document (title and text) for every term.
pub fn repair_term_doc_index(corpus: &Corpus) -> TermDocIndex {
    let folded: Vec<(String, String)> = corpus
        .documents
        .iter()
        .map(|d| (casefold(&d.title), casefold(&d.text)))
        .collect();
    let rows: Vec<BTreeSet<String>> = corpus
        .terms
        .par_iter()
        .map(|term| {
            let needle = casefold(term);
            corpus
                .documents
                .iter()
                .zip(&folded)
                .filter(|(_, (title, text))| contains_bounded(title, &needle) || contains_bounded(text, &needle))
                .map(|(doc, _)| doc.id.clone())
                .collect()
        })
        .collect();
    TermDocIndex {
        term_to_docs: corpus.terms.iter().cloned().zip(rows).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisionTuple {
    pub doc_id: String,
    pub term: String,
    pub types: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Supervision {
    pub tuples: Vec<SupervisionTuple>,
    /// (doc, term) occurrences skipped because the term has no type entry.
    pub skipped: usize,
}

/// Join the repaired index with `terms2types`, ordered by (doc id, term).
pub fn build_supervision(corpus: &Corpus, index: &TermDocIndex) -> Supervision {
    let mut tuples = Vec::new();
    let mut skipped = 0;
    for (term, docs) in &index.term_to_docs {
        match corpus.term_to_types.get(term) {
            Some(types) => tuples.extend(docs.iter().map(|doc_id| SupervisionTuple {
                doc_id: doc_id.clone(),
                term: term.clone(),
                types: types.clone(),
            })),
            None => skipped += docs.len(),
        }
    }
    tuples.sort_by(|a, b| (&a.doc_id, &a.term).cmp(&(&b.doc_id, &b.term)));
    Supervision { tuples, skipped }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub intersection_count: usize,
    pub norm_by_terms: f64,
    pub norm_by_types: f64,
}

pub fn term_type_overlap(corpus: &Corpus) -> Result<OverlapStats> {
    let terms: HashSet<String> = corpus.terms.iter().map(|t| normalize(t)).collect();
    let types: HashSet<String> = corpus.types.iter().map(|t| normalize(t)).collect();
    if terms.is_empty() {
        return Err(CorpusError::EmptySet("terms"));
    }
    if types.is_empty() {
        return Err(CorpusError::EmptySet("types"));
    }
    let intersection_count = terms.intersection(&types).count();
    Ok(OverlapStats {
        intersection_count,
        norm_by_terms: intersection_count as f64 / terms.len() as f64,
        norm_by_types: intersection_count as f64 / types.len() as f64,
    })
}

/// Casefold, split on non-alphanumeric characters and drop short tokens.
pub fn tokenize(text: &str, min_len: usize) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(move |t| !t.is_empty() && t.chars().count() >= min_len)
        .map(casefold)
}

/// Document-frequency table for TF-IDF keyword extraction.
///
/// Scores are `tf · (ln((1 + N) / (1 + df)) + 1)` with raw term counts over
/// the document text.
#[derive(Debug, Clone)]
pub struct TfidfIndex {
    doc_freq: HashMap<String, usize>,
    n_docs: usize,
    min_token_len: usize,
}

impl TfidfIndex {
    pub const DEFAULT_MIN_TOKEN_LEN: usize = 2;

    pub fn new(corpus: &Corpus) -> Self {
        Self::with_min_token_len(corpus, Self::DEFAULT_MIN_TOKEN_LEN)
    }

    pub fn with_min_token_len(corpus: &Corpus, min_token_len: usize) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for doc in &corpus.documents {
            let unique: HashSet<String> = tokenize(&doc.text, min_token_len).collect();
            for tok in unique {
                *doc_freq.entry(tok).or_default() += 1;
            }
        }
        Self {
            doc_freq,
            n_docs: corpus.documents.len(),
            min_token_len,
        }
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.doc_freq.get(token).copied().unwrap_or(0);
        ((1.0 + self.n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    /// Top-`k` tokens of `doc` by descending score, ties lexicographic.
    pub fn keywords(&self, doc: &Document, k: usize) -> Vec<String> {
        let mut tf: HashMap<String, usize> = HashMap::new();
        for tok in tokenize(&doc.text, self.min_token_len) {
            *tf.entry(tok).or_default() += 1;
        }
        let mut scored: Vec<(f64, String)> = tf
            .into_iter()
            .map(|(tok, count)| (count as f64 * self.idf(&tok), tok))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, tok)| tok).collect()
    }
}

pub fn tfidf_keywords(corpus: &Corpus, doc_id: &str, k: usize) -> Result<Vec<String>> {
    let doc = corpus
        .document(doc_id)
        .ok_or_else(|| CorpusError::UnknownDocId(doc_id.to_string()))?;
    Ok(TfidfIndex::new(corpus).keywords(doc, k))
}
