//! Zero-shot term typing: prompt templating, cosine classification, the
//! entropy-weighted ensemble and DistMult scoring with z-score selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{cosine_scores, dot, EmbeddingStore, StoreError};

#[derive(Debug, Error)]
pub enum ZeroShotError {
    #[error("template {0:?} must contain exactly one {{text}} slot")]
    BadTemplate(String),
    #[error("template {0:?} needs a domain label")]
    MissingDomain(String),
    #[error("no candidate types")]
    NoCandidates,
    #[error("non-finite similarity at position {0}")]
    NonFinite(usize),
    #[error("temperature must be positive and finite")]
    BadTemperature,
    #[error("no ensemble members")]
    NoMembers,
    #[error("member {member:?} scores a different candidate list")]
    CandidateMismatch { member: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T> = std::result::Result<T, ZeroShotError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Plain,
    Qa,
    Instructional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextRole {
    Term,
    Type,
}

/// Prompt style applied identically to terms and types within a run.
///
/// Templates use `{text}` for the term or type and `{domain}` for the domain
/// label. Unset templates fall back to the defaults for `style`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateStyle {
    pub style: TemplateKind,
    #[serde(default)]
    pub domain_label: Option<String>,
    #[serde(default)]
    pub term_template: Option<String>,
    #[serde(default)]
    pub type_template: Option<String>,
}

impl TemplateStyle {
    pub fn plain() -> Self {
        Self {
            style: TemplateKind::Plain,
            domain_label: None,
            term_template: None,
            type_template: None,
        }
    }

    pub fn qa(domain: impl Into<String>) -> Self {
        Self {
            style: TemplateKind::Qa,
            domain_label: Some(domain.into()),
            term_template: None,
            type_template: None,
        }
    }

    pub fn instructional(domain: impl Into<String>) -> Self {
        Self {
            style: TemplateKind::Instructional,
            ..Self::qa(domain)
        }
    }

    fn template(&self, role: TextRole) -> Option<&str> {
        let custom = match role {
            TextRole::Term => self.term_template.as_deref(),
            TextRole::Type => self.type_template.as_deref(),
        };
        custom.or(match (self.style, role) {
            (TemplateKind::Plain, _) => None,
            (TemplateKind::Qa, TextRole::Term) => Some("In {domain}, explain {text}"),
            (TemplateKind::Instructional, TextRole::Term) => Some("In {domain}, define {text}"),
            (TemplateKind::Qa, TextRole::Type) => Some("This {domain} category represents {text}"),
            (TemplateKind::Instructional, TextRole::Type) => Some("This {domain} category encompasses {text}"),
        })
    }
}

pub fn apply_template(text: &str, style: &TemplateStyle, role: TextRole) -> Result<String> {
    let Some(template) = style.template(role) else {
        return Ok(text.to_string());
    };
    if template.matches("{text}").count() != 1 {
        return Err(ZeroShotError::BadTemplate(template.to_string()));
    }
    let filled = if template.contains("{domain}") {
        let domain = style
            .domain_label
            .as_deref()
            .ok_or_else(|| ZeroShotError::MissingDomain(template.to_string()))?;
        template.replace("{domain}", domain)
    } else {
        template.to_string()
    };
    Ok(filled.replacen("{text}", text, 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypePrediction {
    pub term: String,
    pub predicted: Vec<String>,
    pub scores: Vec<f64>,
}

/// Index of the maximum score; ties go to the smallest key.
fn argmax_by<K: Ord>(scores: &[f64], key: impl Fn(usize) -> K) -> usize {
    (0..scores.len())
        .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| key(b).cmp(&key(a))))
        .expect("non-empty scores")
}

pub fn argmax(scores: &[f64]) -> usize {
    argmax_by(scores, |i| i)
}

/// Assign the single type with the highest cosine similarity; ties go to the
/// smallest type id.
pub fn cosine_classify(term: &str, term_vec: &[f32], types: &EmbeddingStore) -> Result<TypePrediction> {
    if types.is_empty() {
        return Err(ZeroShotError::NoCandidates);
    }
    let scores = cosine_scores(types, term_vec)?;
    let best = argmax_by(&scores, |i| types.ids()[i].as_str());
    Ok(TypePrediction {
        term: term.to_string(),
        predicted: vec![types.ids()[best].clone()],
        scores,
    })
}

/// One ensemble member's view of a term: similarities over the candidate
/// types and the entropy-derived confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberPrediction {
    pub member_name: String,
    pub candidates: Vec<String>,
    pub similarities: Vec<f64>,
    pub probs: Vec<f64>,
    pub p_max: f64,
    pub h_norm: f64,
    pub confidence: f64,
    pub weight_raw: f64,
}

pub const CONFIDENCE_WEIGHT: f64 = 0.7;
pub const CERTAINTY_WEIGHT: f64 = 0.3;

/// Softmax over `similarities / temperature`, normalized entropy and the
/// derived confidence and raw weight.
pub fn member_predict(
    member_name: impl Into<String>,
    candidates: Vec<String>,
    similarities: Vec<f64>,
    temperature: f64,
) -> Result<MemberPrediction> {
    if similarities.is_empty() {
        return Err(ZeroShotError::NoCandidates);
    }
    if candidates.len() != similarities.len() {
        return Err(ZeroShotError::CandidateMismatch {
            member: member_name.into(),
        });
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(ZeroShotError::BadTemperature);
    }
    if let Some(i) = similarities.iter().position(|s| !s.is_finite()) {
        return Err(ZeroShotError::NonFinite(i));
    }
    let probs = softmax(&similarities, temperature);
    let k = probs.len();
    let h_norm = if k == 1 {
        0.0
    } else if probs.iter().all(|&p| p == probs[0]) {
        // exactly uniform; the entropy sum would land a few ulps short of ln K
        1.0
    } else {
        let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
        (h / (k as f64).ln()).clamp(0.0, 1.0)
    };
    let p_max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let confidence = p_max * (1.0 - h_norm);
    Ok(MemberPrediction {
        member_name: member_name.into(),
        candidates,
        similarities,
        probs,
        p_max,
        h_norm,
        confidence,
        weight_raw: CONFIDENCE_WEIGHT * confidence + CERTAINTY_WEIGHT * (1.0 - h_norm),
    })
}

fn softmax(xs: &[f64], temperature: f64) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| ((x - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn check_aligned(members: &[MemberPrediction]) -> Result<()> {
    let first = members.first().ok_or(ZeroShotError::NoMembers)?;
    for m in &members[1..] {
        if m.candidates != first.candidates {
            return Err(ZeroShotError::CandidateMismatch {
                member: m.member_name.clone(),
            });
        }
    }
    Ok(())
}

/// Raw weights normalized onto the simplex; uniform when they all vanish.
pub fn ensemble_weights(members: &[MemberPrediction]) -> Result<Vec<f64>> {
    check_aligned(members)?;
    let total: f64 = members.iter().map(|m| m.weight_raw).sum();
    if total <= 0.0 {
        return Ok(vec![1.0 / members.len() as f64; members.len()]);
    }
    Ok(members.iter().map(|m| m.weight_raw / total).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Weighted sum of raw similarities.
    #[default]
    Similarities,
    /// Weighted sum of softmax probabilities.
    Probabilities,
}

pub fn ensemble_predict(term: &str, members: &[MemberPrediction], aggregation: Aggregation) -> Result<TypePrediction> {
    let weights = ensemble_weights(members)?;
    let candidates = &members[0].candidates;
    let mut scores = vec![0.0; candidates.len()];
    for (m, w) in members.iter().zip(&weights) {
        let values = match aggregation {
            Aggregation::Similarities => &m.similarities,
            Aggregation::Probabilities => &m.probs,
        };
        for (s, v) in scores.iter_mut().zip(values) {
            *s += w * v;
        }
    }
    let best = argmax_by(&scores, |i| candidates[i].as_str());
    Ok(TypePrediction {
        term: term.to_string(),
        predicted: vec![candidates[best].clone()],
        scores,
    })
}

/// Identity-relation DistMult: the raw dot product with every type row.
pub fn distmult_scores(term_vec: &[f32], types: &EmbeddingStore) -> Result<Vec<f64>> {
    if term_vec.len() != types.dim() {
        return Err(StoreError::DimMismatch {
            expected: types.dim(),
            got: term_vec.len(),
        }
        .into());
    }
    Ok(types.rows().map(|(_, row)| dot(term_vec, row)).collect())
}

pub const DEFAULT_TAU: f64 = 1.0;

/// Indices whose population z-score exceeds `tau`, by descending score.
/// Falls back to the argmax singleton when nothing qualifies or σ = 0.
pub fn zscore_select(scores: &[f64], tau: f64) -> Vec<usize> {
    if scores.is_empty() {
        return Vec::new();
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sigma = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    // A constant vector can leave σ at rounding noise instead of 0.
    let constant = scores.iter().all(|&s| s == scores[0]);
    if sigma > 0.0 && !constant {
        let mut picked: Vec<usize> = (0..scores.len())
            .filter(|&j| (scores[j] - mean) / sigma > tau)
            .collect();
        if !picked.is_empty() {
            picked.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
                Ordering::Equal => a.cmp(&b),
                o => o,
            });
            return picked;
        }
    }
    vec![argmax(scores)]
}

pub fn distmult_predict(term: &str, term_vec: &[f32], types: &EmbeddingStore, tau: f64) -> Result<TypePrediction> {
    if types.is_empty() {
        return Err(ZeroShotError::NoCandidates);
    }
    let scores = distmult_scores(term_vec, types)?;
    let predicted = zscore_select(&scores, tau)
        .into_iter()
        .map(|j| types.ids()[j].clone())
        .collect();
    Ok(TypePrediction {
        term: term.to_string(),
        predicted,
        scores,
    })
}

/// One JSONL output line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypingRecord {
    pub term: String,
    pub types: Vec<String>,
}

impl From<&TypePrediction> for TypingRecord {
    fn from(p: &TypePrediction) -> Self {
        Self {
            term: p.term.clone(),
            types: p.predicted.clone(),
        }
    }
}
