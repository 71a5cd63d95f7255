//! Zero-shot term typing: cosine, confidence-weighted ensemble and DistMult.

use std::path::PathBuf;

use ontolearn::embedstore::{cosine_scores, EmbeddingStore};
use ontolearn::zeroshot::{
    cosine_classify, distmult_predict, ensemble_predict, ensemble_weights, member_predict, Aggregation, TypePrediction,
    TypingRecord, DEFAULT_TAU,
};
use serde::{Deserialize, Serialize};

use super::io::{load_store, read_lines, vector};
use super::Out;
use crate::config::Resolved;
use crate::error::RunError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

fn write_predictions(out: &mut Out, predictions: &[TypePrediction]) -> Result<(), RunError> {
    let records: Vec<TypingRecord> = predictions
        .iter()
        .map(|p| TypingRecord {
            term: p.term.clone(),
            types: p.predicted.clone(),
        })
        .collect();
    out.jsonl("typing.jsonl", &records)?;
    out.log.stat("terms", records.len());
    Ok(())
}

struct Stores {
    terms: EmbeddingStore,
    types: EmbeddingStore,
    test_terms: Vec<String>,
}

fn stores(run: &Resolved) -> Result<Stores, RunError> {
    Ok(Stores {
        terms: load_store(run.path("term_store"))?,
        types: load_store(run.path("type_store"))?,
        test_terms: read_lines(run.path("test_terms"))?,
    })
}

pub fn zeroshot(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let _: NoParams = run.params()?;
    let s = stores(run)?;
    let term_path = run.path("term_store");
    let predictions = s
        .test_terms
        .iter()
        .map(|t| Ok(cosine_classify(t, vector(&s.terms, t, term_path)?, &s.types)?))
        .collect::<Result<Vec<_>, RunError>>()?;
    write_predictions(out, &predictions)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistMultParams {
    #[serde(default = "default_tau")]
    tau: f64,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

pub fn distmult(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let p: DistMultParams = run.params()?;
    if !p.tau.is_finite() {
        return Err(RunError::Config("params.tau must be finite".into()));
    }
    let s = stores(run)?;
    let term_path = run.path("term_store");
    let predictions = s
        .test_terms
        .iter()
        .map(|t| Ok(distmult_predict(t, vector(&s.terms, t, term_path)?, &s.types, p.tau)?))
        .collect::<Result<Vec<_>, RunError>>()?;
    let multi = predictions.iter().filter(|p| p.predicted.len() > 1).count();
    out.log.stat("multi_type_terms", multi);
    write_predictions(out, &predictions)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberSpec {
    name: String,
    term_store: PathBuf,
    type_store: PathBuf,
    #[serde(default = "default_temperature")]
    temperature: f64,
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleParams {
    members: Vec<MemberSpec>,
    #[serde(default)]
    aggregation: Aggregation,
}

struct Member {
    spec: MemberSpec,
    term_path: PathBuf,
    terms: EmbeddingStore,
    types: EmbeddingStore,
}

#[derive(Serialize)]
struct MemberRow<'a> {
    name: &'a str,
    weight: f64,
    p_max: f64,
    h_norm: f64,
    confidence: f64,
}

#[derive(Serialize)]
struct EnsembleRow<'a> {
    term: &'a str,
    members: Vec<MemberRow<'a>>,
}

pub fn ensemble(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let p: EnsembleParams = run.params()?;
    if p.members.is_empty() {
        return Err(RunError::Config("params.members must not be empty".into()));
    }
    let mut members = Vec::with_capacity(p.members.len());
    for (i, spec) in p.members.into_iter().enumerate() {
        let term_path = run.param_path(&format!("members[{i}].term_store"), &spec.term_store)?;
        let type_path = run.param_path(&format!("members[{i}].type_store"), &spec.type_store)?;
        out.log
            .extra_input(format!("members.{}.term_store", spec.name), term_path.clone());
        out.log
            .extra_input(format!("members.{}.type_store", spec.name), type_path.clone());
        members.push(Member {
            terms: load_store(&term_path)?,
            types: load_store(&type_path)?,
            term_path,
            spec,
        });
    }
    // Every member scores the first member's candidate types in its order.
    let candidates = members[0].types.ids().to_vec();
    for m in &mut members[1..] {
        m.types = m
            .types
            .select(&candidates)
            .map_err(|e| RunError::Data(format!("member {}: {e}", m.spec.name)))?;
    }

    let test_terms = read_lines(run.path("test_terms"))?;
    let mut predictions = Vec::with_capacity(test_terms.len());
    let mut rows = Vec::with_capacity(test_terms.len());
    for term in &test_terms {
        let views = members
            .iter()
            .map(|m| {
                let sims = cosine_scores(&m.types, vector(&m.terms, term, &m.term_path)?)?;
                Ok(member_predict(
                    &m.spec.name,
                    candidates.clone(),
                    sims,
                    m.spec.temperature,
                )?)
            })
            .collect::<Result<Vec<_>, RunError>>()?;
        let weights = ensemble_weights(&views)?;
        predictions.push(ensemble_predict(term, &views, p.aggregation)?);
        rows.push(EnsembleRow {
            term,
            members: members
                .iter()
                .zip(views.iter().zip(&weights))
                .map(|(m, (v, &w))| MemberRow {
                    name: &m.spec.name,
                    weight: w,
                    p_max: v.p_max,
                    h_norm: v.h_norm,
                    confidence: v.confidence,
                })
                .collect(),
        });
    }
    out.jsonl("ensemble_members.jsonl", &rows)?;
    write_predictions(out, &predictions)
}
