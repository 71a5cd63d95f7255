//! Brute-force reference implementations, written independently of the
//! library code they check.

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::{Array2, ArrayView2};
use ontolearn::taxo::{bce_loss, AttentionHead, ScoreMatrix};

/// Pairwise Mann–Whitney AUC: ties count one half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Population z-scores above `tau`, descending by score then index; argmax
/// singleton (lowest index) otherwise.
pub fn zscore_brute(scores: &[f64], tau: f64) -> Vec<usize> {
    let n = scores.len() as f64;
    let mut mean = 0.0;
    for s in scores {
        mean += s;
    }
    mean /= n;
    let mut var = 0.0;
    for s in scores {
        var += (s - mean) * (s - mean);
    }
    let sd = (var / n).sqrt();
    let mut out = Vec::new();
    let constant = scores.iter().all(|&s| s == scores[0]);
    if sd > 0.0 && !constant {
        for (i, s) in scores.iter().enumerate() {
            if (s - mean) / sd > tau {
                out.push(i);
            }
        }
    }
    if out.is_empty() {
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        return vec![best];
    }
    out.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    out
}

/// Every candidate threshold `t` from the unique probabilities, F1 of
/// `p ≥ t`, best F1 with ties to the smallest `t`; the largest candidate
/// when F1 is zero everywhere.
pub fn val_f1_brute(probs: &[f64], labels: &[bool]) -> f64 {
    let mut cands: Vec<f64> = probs.to_vec();
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    let gold = labels.iter().filter(|&&l| l).count() as f64;
    let mut best_t = *cands.last().unwrap();
    let mut best_f1 = 0.0;
    // descending scan; `>=` lets a smaller threshold take over a tie
    for &t in cands.iter().rev() {
        let pred: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] >= t).collect();
        let tp = pred.iter().filter(|&&i| labels[i]).count() as f64;
        let p = if pred.is_empty() { 0.0 } else { tp / pred.len() as f64 };
        let r = if gold > 0.0 { tp / gold } else { 0.0 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if f1 > 0.0 && f1 >= best_f1 - 1e-12 {
            best_f1 = f1.max(best_f1);
            best_t = t;
        }
    }
    best_t
}

/// Exact cosine ranking in f64, ties by ascending id.
pub fn knn_brute(rows: &[(String, Vec<f32>)], query: &[f32], k: usize) -> Vec<(String, f64)> {
    let norm = |v: &[f32]| v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut scored: Vec<(String, f64)> = rows
        .iter()
        .map(|(id, v)| {
            let d: f64 = v.iter().zip(query).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            (id.clone(), d / (norm(v) * qn))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// TF-IDF keywords: raw counts, smoothed idf, ties lexicographic.
pub fn tfidf_brute(docs: &[String], doc: usize, k: usize, min_len: usize) -> Vec<String> {
    let toks = |s: &str| -> Vec<String> {
        s.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.chars().count() >= min_len)
            .map(String::from)
            .collect()
    };
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| toks(d)).collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for t in &tokenized {
        for w in t.iter().collect::<HashSet<_>>() {
            *df.entry(w).or_default() += 1;
        }
    }
    let n = docs.len() as f64;
    let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
    for w in &tokenized[doc] {
        *tf.entry(w).or_default() += 1;
    }
    let mut scored: Vec<(&str, f64)> = tf
        .iter()
        .map(|(w, &c)| (*w, c as f64 * (((1.0 + n) / (1.0 + df[w] as f64)).ln() + 1.0)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    scored.into_iter().take(k).map(|(w, _)| w.to_string()).collect()
}

/// Central finite differences of the batch loss for every parameter,
/// in the order w_query, w_key, mix_logits (if trainable), bias.
pub fn finite_difference_gradient(
    head: &AttentionHead,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    mask: &Array2<bool>,
    labels: &Array2<bool>,
    pos_weight: f64,
    h: f64,
) -> Vec<f64> {
    let loss = |p: &AttentionHead| {
        let s: ScoreMatrix = p.forward_masked(x, y, mask).unwrap();
        bce_loss(&s, labels, pos_weight)
    };
    let mut out = Vec::new();
    let mut probe = |set: &dyn Fn(&mut AttentionHead, f64)| {
        let mut plus = head.clone();
        set(&mut plus, h);
        let mut minus = head.clone();
        set(&mut minus, -h);
        out.push((loss(&plus) - loss(&minus)) / (2.0 * h));
    };
    let (d, p) = head.w_query.dim();
    for i in 0..d {
        for j in 0..p {
            probe(&|m: &mut AttentionHead, e| m.w_query[[i, j]] += e);
        }
    }
    for i in 0..d {
        for j in 0..p {
            probe(&|m: &mut AttentionHead, e| m.w_key[[i, j]] += e);
        }
    }
    if head.trainable_mix {
        for k in 0..head.num_heads {
            probe(&|m: &mut AttentionHead, e| m.mix_logits[k] += e);
        }
    }
    probe(&|m: &mut AttentionHead, e| m.bias += e);
    out
}

/// Analytic gradients flattened in the same order as
/// [`finite_difference_gradient`].
pub fn analytic_gradient(
    head: &AttentionHead,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    mask: &Array2<bool>,
    labels: &Array2<bool>,
    pos_weight: f64,
) -> Vec<f64> {
    let (_, g) = head.loss_and_gradients(x, y, mask, labels, pos_weight).unwrap();
    let mut out: Vec<f64> = g.w_query.iter().chain(g.w_key.iter()).copied().collect();
    if let Some(m) = g.mix_logits {
        out.extend(m.iter());
    }
    out.push(g.bias);
    out
}

/// Largest relative error; components where both sides sit below `floor`
/// are compared against `floor` instead of their own magnitude.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
