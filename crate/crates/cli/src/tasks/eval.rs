//! Scoring of predicted sets, typings and taxonomies against gold files.

use std::path::Path;

use ontolearn::eval::{edge_prf, render_table, set_prf, Prf, ReportRow};
use ontolearn::taxo::{read_edge_records, TaxonomyGraph};
use ontolearn::text::normalize;
use ontolearn::zeroshot::TypingRecord;
use serde::Deserialize;

use super::io::{read_lines, read_text};
use super::Out;
use crate::config::Resolved;
use crate::error::RunError;

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    /// One item per line.
    Sets,
    /// Parent/child edge records.
    Edges,
    /// JSONL typing records, scored over (term, type) pairs.
    Typing,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Sets => "sets",
            Kind::Edges => "edges",
            Kind::Typing => "typing",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalParams {
    kind: Kind,
    #[serde(default = "default_dataset")]
    dataset: String,
    #[serde(default)]
    metric: Option<String>,
}

fn default_dataset() -> String {
    "dataset".into()
}

fn graph(path: &Path) -> Result<TaxonomyGraph, RunError> {
    let records = read_edge_records(path).map_err(|e| RunError::data_in(path, e))?;
    TaxonomyGraph::from_records(Vec::new(), &records).map_err(|e| RunError::data_in(path, e))
}

fn typing_pairs(path: &Path) -> Result<Vec<String>, RunError> {
    let mut out = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: TypingRecord =
            serde_json::from_str(line).map_err(|e| RunError::data_in(path, format!("line {}: {e}", i + 1)))?;
        let term = normalize(&r.term);
        out.extend(r.types.iter().map(|t| format!("{term}\u{1f}{}", normalize(t))));
    }
    Ok(out)
}

pub fn eval(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let p: EvalParams = run.params()?;
    let (pred, gold) = (run.path("predicted"), run.path("gold"));
    let in_gold = |e| RunError::data_in(gold, e);
    let prf: Prf = match p.kind {
        Kind::Sets => set_prf(read_lines(pred)?, read_lines(gold)?).map_err(in_gold)?,
        Kind::Edges => edge_prf(&graph(pred)?, &graph(gold)?).map_err(in_gold)?,
        Kind::Typing => set_prf(typing_pairs(pred)?, typing_pairs(gold)?).map_err(in_gold)?,
    };
    let metric = p.metric.unwrap_or_else(|| p.kind.name().to_string());
    let rows = vec![ReportRow::new(p.dataset, metric, prf)];
    out.json("report.json", &rows)?;
    out.bytes("report.txt", render_table(&rows).as_bytes())?;
    out.log.stat("f1", prf.f1);
    Ok(())
}
