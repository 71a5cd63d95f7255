//! Precision/recall/F1 over string sets and taxonomy edges, and ROC AUC.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxo::TaxonomyGraph;
use crate::text::normalize;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("ROC AUC needs at least one positive and one negative label")]
    SingleClass,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }

    /// From match counts. An empty prediction has precision 0.
    pub fn from_counts(hits: usize, predicted: usize, gold: usize) -> Result<Self, EvalError> {
        if gold == 0 {
            return Err(EvalError::EmptyGold);
        }
        let precision = if predicted == 0 {
            0.0
        } else {
            hits as f64 / predicted as f64
        };
        Ok(Self::from_precision_recall(precision, hits as f64 / gold as f64))
    }
}

/// Exact-match P/R/F1 after casefolding and whitespace collapsing.
pub fn set_prf<P, G>(predicted: P, gold: G) -> Result<Prf, EvalError>
where
    P: IntoIterator,
    P::Item: AsRef<str>,
    G: IntoIterator,
    G::Item: AsRef<str>,
{
    let pred: HashSet<String> = predicted.into_iter().map(|s| normalize(s.as_ref())).collect();
    let gold: HashSet<String> = gold.into_iter().map(|s| normalize(s.as_ref())).collect();
    Prf::from_counts(pred.intersection(&gold).count(), pred.len(), gold.len())
}

/// Directed (parent, child) pair matching by type name.
pub fn edge_prf(predicted: &TaxonomyGraph, gold: &TaxonomyGraph) -> Result<Prf, EvalError> {
    let pairs = |g: &TaxonomyGraph| -> HashSet<(String, String)> {
        g.named_edges()
            .map(|(child, parent)| (normalize(parent), normalize(child)))
            .collect()
    };
    let pred = pairs(predicted);
    let gold = pairs(gold);
    Prf::from_counts(pred.intersection(&gold).count(), pred.len(), gold.len())
}

/// Mann–Whitney ROC AUC with average ranks for tied scores.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::NonFinite(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based average ranks of the positives, accumulated in
    // half-units so ties stay exact.
    let mut pos_rank_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank_sum_x2 = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        pos_rank_x2 += rank_sum_x2 * pos_in_group;
        i = j + 1;
    }
    let n_pos_u = n_pos as u128;
    // U = R_pos − P(P+1)/2, doubled.
    let u_x2 = pos_rank_x2 - n_pos_u * (n_pos_u + 1);
    Ok(u_x2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub metric: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ReportRow {
    pub fn new(dataset: impl Into<String>, metric: impl Into<String>, prf: Prf) -> Self {
        Self {
            dataset: dataset.into(),
            metric: metric.into(),
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
        }
    }
}

/// Aligned plain-text table for a report.
pub fn render_table(rows: &[ReportRow]) -> String {
    let dw = rows.iter().map(|r| r.dataset.len()).chain([7]).max().unwrap_or(7);
    let mw = rows.iter().map(|r| r.metric.len()).chain([6]).max().unwrap_or(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<dw$}  {:<mw$}  {:>9}  {:>9}  {:>9}",
        "dataset", "metric", "precision", "recall", "f1"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<dw$}  {:<mw$}  {:>9.4}  {:>9.4}  {:>9.4}",
            r.dataset, r.metric, r.precision, r.recall, r.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn set_prf_examples() {
        let p = set_prf(["a", "b", "c"], ["b", "c", "d"]).unwrap();
        assert_abs_diff_eq!(p.precision, 2.0 / 3.0);
        assert_abs_diff_eq!(p.recall, 2.0 / 3.0);
        assert_abs_diff_eq!(p.f1, 2.0 / 3.0);
        let p = set_prf(["A ", "b"], ["a", "B"]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        assert_eq!(set_prf(["a"], Vec::<String>::new()), Err(EvalError::EmptyGold));
        let p = set_prf(Vec::<String>::new(), ["a"]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn f1_from_printed_precision_recall() {
        assert_abs_diff_eq!(Prf::from_precision_recall(0.6111, 0.6875).f1, 0.6471, epsilon = 5e-4);
        assert_abs_diff_eq!(Prf::from_precision_recall(0.6705, 0.4792).f1, 0.5590, epsilon = 5e-4);
    }

    #[test]
    fn edge_prf_examples() {
        let types = ["a", "b", "c", "d"].map(String::from).to_vec();
        // (child, parent) name pairs: a is the parent of b, c the parent of d
        let gold = TaxonomyGraph::from_named_edges(types.clone(), [("b", "a"), ("d", "c")]).unwrap();
        let pred = TaxonomyGraph::from_named_edges(types.clone(), [("b", "a")]).unwrap();
        let p = edge_prf(&pred, &gold).unwrap();
        assert_eq!((p.precision, p.recall), (1.0, 0.5));
        assert_abs_diff_eq!(p.f1, 2.0 / 3.0);

        let reversed = TaxonomyGraph::from_named_edges(types, [("a", "b")]).unwrap();
        assert_eq!(edge_prf(&reversed, &gold).unwrap().precision, 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.5, 0.4], &[true, true]), Err(EvalError::SingleClass));
        assert!(matches!(
            roc_auc(&[0.5], &[true, false]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn table_renders_aligned() {
        let t = render_table(&[ReportRow::new("matonto", "edges", Prf::from_precision_recall(0.5, 0.5))]);
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].len(), lines[1].len());
    }
}
