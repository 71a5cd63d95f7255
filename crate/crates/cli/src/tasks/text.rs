//! Corpus tasks: term→document repair and TF-IDF keywords.

use ontolearn::corpus::{
    build_supervision, load_corpus, parse_documents, repair_term_doc_index, term_type_overlap, Corpus, CorpusPaths,
    TfidfIndex,
};
use ontolearn::fewshot::KEYWORD_COUNT;
use serde::{Deserialize, Serialize};

use super::io::read_text;
use super::Out;
use crate::config::Resolved;
use crate::error::RunError;

pub fn corpus_paths(run: &Resolved) -> CorpusPaths {
    CorpusPaths {
        documents: run.path("documents").to_path_buf(),
        terms: run.path("terms").to_path_buf(),
        types: run.path("types").to_path_buf(),
        terms2types: run.opt_path("terms2types").map(Into::into),
        terms2docs: run.opt_path("terms2docs").map(Into::into),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RepairParams {}

pub fn repair(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let _: RepairParams = run.params()?;
    let corpus = load_corpus(&corpus_paths(run))?;
    let index = repair_term_doc_index(&corpus);
    out.json("terms2docs.repaired.json", &index)?;

    let unmatched = index.term_to_docs.values().filter(|d| d.is_empty()).count();
    out.log.stat("documents", corpus.documents.len());
    out.log.stat("terms", corpus.terms.len());
    out.log.stat("terms_without_documents", unmatched);
    if !corpus.term_to_types.is_empty() {
        let sup = build_supervision(&corpus, &index);
        out.jsonl("supervision.jsonl", &sup.tuples)?;
        out.log.stat("supervision_tuples", sup.tuples.len());
        out.log.stat("supervision_skipped", sup.skipped);
    }
    if let Ok(overlap) = term_type_overlap(&corpus) {
        out.log.stat("term_type_overlap", overlap);
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TfidfParams {
    k: usize,
    min_token_len: usize,
}

impl Default for TfidfParams {
    fn default() -> Self {
        Self {
            k: KEYWORD_COUNT,
            min_token_len: TfidfIndex::DEFAULT_MIN_TOKEN_LEN,
        }
    }
}

#[derive(Serialize)]
struct KeywordRow<'a> {
    doc_id: &'a str,
    keywords: Vec<String>,
}

pub fn tfidf(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let p: TfidfParams = run.params()?;
    let path = run.path("documents");
    let docs = parse_documents(&read_text(path)?).map_err(|e| RunError::data_in(path, e))?;
    let corpus = Corpus::new(docs, vec![], vec![], Default::default(), Default::default())?;
    let index = TfidfIndex::with_min_token_len(&corpus, p.min_token_len);
    let rows: Vec<KeywordRow> = corpus
        .documents
        .iter()
        .map(|d| KeywordRow {
            doc_id: &d.id,
            keywords: index.keywords(d, p.k),
        })
        .collect();
    out.jsonl("keywords.jsonl", &rows)?;
    out.log.stat("documents", rows.len());
    Ok(())
}
