//! Taxonomy discovery with a single cross-attention head over frozen type
//! embeddings.
//!
//! The head scores every (child, parent) pair of types:
//!
//! ```text
//! S_h   = (X Wq_h)(Y Wk_h)ᵀ / √d_h          per head h
//! L     = Σ_h mix_h · S_h + bias
//! probs = sigmoid(L)                         or a row softmax over valid parents
//! ```
//!
//! `probs[i][j]` is the likelihood that type `i` is a subclass of type `j`.
//! Training minimizes a positive-weighted binary cross-entropy averaged over
//! all valid pairs, with missing edges counted as negatives. Gradients are
//! derived by hand; see `tests/gradient_check.rs` for the finite-difference
//! oracle.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::EmbeddingStore;
use crate::eval::roc_auc;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-7;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XATNHD01";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;
pub const MAX_DEFAULT_PROJ_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum TaxoError {
    #[error("type index {index} out of range for {n} types")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("self-loop on type {0:?}")]
    SelfLoop(String),
    #[error("duplicate type {0:?}")]
    DuplicateType(String),
    #[error("unknown type {0:?}")]
    UnknownType(String),
    #[error("need at least {min} types to split, got {got}")]
    TooFewTypes { min: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("projection width {proj_dim} is not divisible by {num_heads} heads")]
    BadHeads { proj_dim: usize, num_heads: usize },
    #[error("non-finite parameter {0}")]
    NonFinite(&'static str),
    #[error("no embedding for type {0:?}")]
    MissingEmbedding(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("total_steps must be positive")]
    ZeroSteps,
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("empty validation set")]
    EmptyValidation,
    #[error("no test pairs")]
    NoTestPairs,
    #[error("no configs to search")]
    NoConfigs,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TaxoError>;

// ---------------------------------------------------------------------------
// Graph

/// Types plus directed is-a edges stored as (child index, parent index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyGraph {
    types: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
    index: HashMap<String, usize>,
}

/// One line of a taxonomy file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub parent: String,
    pub child: String,
}

impl TaxonomyGraph {
    pub fn new<I>(types: Vec<String>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut index = HashMap::with_capacity(types.len());
        for (i, t) in types.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(TaxoError::DuplicateType(t.clone()));
            }
        }
        let n = types.len();
        let mut set = BTreeSet::new();
        for (c, p) in edges {
            for i in [c, p] {
                if i >= n {
                    return Err(TaxoError::IndexOutOfRange { index: i, n });
                }
            }
            if c == p {
                return Err(TaxoError::SelfLoop(types[c].clone()));
            }
            set.insert((c, p));
        }
        Ok(Self {
            types,
            edges: set,
            index,
        })
    }

    /// Build from `(child, parent)` name pairs.
    pub fn from_named_edges<'a, I>(types: Vec<String>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let index: HashMap<&str, usize> = types.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| TaxoError::UnknownType(name.to_string()))
        };
        let pairs = edges
            .into_iter()
            .map(|(c, p)| Ok((lookup(c)?, lookup(p)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(types, pairs)
    }

    /// Build from file records. Types missing from `types` are appended in
    /// first-seen order (parent before child).
    pub fn from_records(mut types: Vec<String>, records: &[EdgeRecord]) -> Result<Self> {
        let mut known: std::collections::HashSet<String> = types.iter().cloned().collect();
        for r in records {
            for name in [&r.parent, &r.child] {
                if known.insert(name.clone()) {
                    types.push(name.clone());
                }
            }
        }
        let pairs: Vec<(&str, &str)> = records.iter().map(|r| (r.child.as_str(), r.parent.as_str())).collect();
        Self::from_named_edges(types.clone(), pairs)
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn has_edge(&self, child: usize, parent: usize) -> bool {
        self.edges.contains(&(child, parent))
    }

    /// `(child, parent)` name pairs.
    pub fn named_edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges
            .iter()
            .map(|&(c, p)| (self.types[c].as_str(), self.types[p].as_str()))
    }

    /// Edge density `|E| / N²`.
    pub fn density(&self) -> f64 {
        if self.types.is_empty() {
            0.0
        } else {
            self.edges.len() as f64 / (self.types.len() as f64).powi(2)
        }
    }

    /// `labels[i][j]` is true iff `i` is a child of `j`.
    pub fn label_matrix(&self) -> Array2<bool> {
        let n = self.len();
        let mut m = Array2::from_elem((n, n), false);
        for &(c, p) in &self.edges {
            m[[c, p]] = true;
        }
        m
    }

    /// Induced subgraph on `keep` (in the given order) and the number of
    /// edges that left it.
    pub fn induced(&self, keep: &[usize]) -> (Self, usize) {
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let types = keep.iter().map(|&i| self.types[i].clone()).collect();
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter_map(|&(c, p)| Some((*remap.get(&c)?, *remap.get(&p)?)))
            .collect();
        let touched = self
            .edges
            .iter()
            .filter(|(c, p)| remap.contains_key(c) || remap.contains_key(p))
            .count();
        let kept = edges.len();
        (
            Self::new(types, edges).expect("induced subgraph of a valid graph"),
            touched - kept,
        )
    }

    pub fn to_records(&self) -> Vec<EdgeRecord> {
        self.named_edges()
            .map(|(c, p)| EdgeRecord {
                parent: p.to_string(),
                child: c.to_string(),
            })
            .collect()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_records())?)?;
        Ok(())
    }
}

pub fn read_edge_records(path: impl AsRef<Path>) -> Result<Vec<EdgeRecord>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone)]
pub struct TypeSplit {
    pub train: TaxonomyGraph,
    pub validation: TaxonomyGraph,
    /// Edges with endpoints in different partitions.
    pub dropped_edges: usize,
}

/// Split types (not edges) into train and validation partitions. Each
/// partition keeps only the edges with both endpoints inside it; type order
/// within a partition follows the original order.
pub fn split_types(graph: &TaxonomyGraph, ratio: f64, seed: u64) -> Result<TypeSplit> {
    const MIN_TYPES: usize = 5;
    if graph.len() < MIN_TYPES {
        return Err(TaxoError::TooFewTypes {
            min: MIN_TYPES,
            got: graph.len(),
        });
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TaxoError::InvalidConfig(format!("split ratio {ratio} not in (0, 1)")));
    }
    let n = graph.len();
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = order[..n_train].to_vec();
    let mut val_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let (train, _) = graph.induced(&train_idx);
    let (validation, _) = graph.induced(&val_idx);
    let dropped_edges = graph.edges.len() - train.edges.len() - validation.edges.len();
    Ok(TypeSplit {
        train,
        validation,
        dropped_edges,
    })
}

// ---------------------------------------------------------------------------
// Head

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Independent per-pair probabilities.
    #[default]
    Sigmoid,
    /// Softmax over the valid parents of each child row.
    RowSoftmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub num_heads: usize,
    /// `model_dim × proj_dim`; head `h` owns columns `h·d_h .. (h+1)·d_h`.
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    /// Head mixing weights are `softmax(mix_logits)`; all-zero logits give
    /// the uniform mean over heads.
    pub mix_logits: Array1<f64>,
    pub trainable_mix: bool,
    pub bias: f64,
    pub output: OutputMode,
}

impl AttentionHead {
    /// Seeded initialization: projections uniform in `±1/√d`, uniform head
    /// mix, zero bias.
    pub fn init(model_dim: usize, proj_dim: usize, num_heads: usize, seed: u64) -> Result<Self> {
        if model_dim == 0 || proj_dim == 0 || num_heads == 0 {
            return Err(TaxoError::InvalidConfig("dimensions and heads must be positive".into()));
        }
        if !proj_dim.is_multiple_of(num_heads) {
            return Err(TaxoError::BadHeads { proj_dim, num_heads });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (model_dim as f64).sqrt();
        let mut draw = |_| rng.gen_range(-bound..bound);
        let w_query = Array2::from_shape_fn((model_dim, proj_dim), &mut draw);
        let w_key = Array2::from_shape_fn((model_dim, proj_dim), &mut draw);
        Ok(Self {
            num_heads,
            w_query,
            w_key,
            mix_logits: Array1::zeros(num_heads),
            trainable_mix: false,
            bias: 0.0,
            output: OutputMode::Sigmoid,
        })
    }

    pub fn model_dim(&self) -> usize {
        self.w_query.nrows()
    }

    pub fn proj_dim(&self) -> usize {
        self.w_query.ncols()
    }

    pub fn head_dim(&self) -> usize {
        self.proj_dim() / self.num_heads
    }

    pub fn head_mix(&self) -> Array1<f64> {
        softmax1(&self.mix_logits)
    }

    fn validate(&self) -> Result<()> {
        if self.w_key.dim() != self.w_query.dim() {
            return Err(TaxoError::DimMismatch {
                expected: self.w_query.ncols(),
                got: self.w_key.ncols(),
            });
        }
        if self.num_heads == 0
            || !self.proj_dim().is_multiple_of(self.num_heads)
            || self.mix_logits.len() != self.num_heads
        {
            return Err(TaxoError::BadHeads {
                proj_dim: self.proj_dim(),
                num_heads: self.num_heads,
            });
        }
        if !self.w_query.iter().all(|x| x.is_finite()) {
            return Err(TaxoError::NonFinite("w_query"));
        }
        if !self.w_key.iter().all(|x| x.is_finite()) {
            return Err(TaxoError::NonFinite("w_key"));
        }
        if !self.mix_logits.iter().all(|x| x.is_finite()) {
            return Err(TaxoError::NonFinite("head_mix"));
        }
        if !self.bias.is_finite() {
            return Err(TaxoError::NonFinite("bias"));
        }
        Ok(())
    }

    /// Every parameter rounded through `f32`, as stored in a checkpoint.
    pub fn rounded_to_f32(&self) -> Self {
        let r = |x: &f64| f64::from(*x as f32);
        Self {
            w_query: self.w_query.map(r),
            w_key: self.w_key.map(r),
            mix_logits: self.mix_logits.map(r),
            bias: r(&self.bias),
            ..self.clone()
        }
    }

    fn pass(&self, child: ArrayView2<f64>, parent: ArrayView2<f64>, mask: &Array2<bool>) -> Result<Pass> {
        self.validate()?;
        let d = self.model_dim();
        for m in [&child, &parent] {
            if m.ncols() != d {
                return Err(TaxoError::DimMismatch {
                    expected: d,
                    got: m.ncols(),
                });
            }
        }
        if mask.dim() != (child.nrows(), parent.nrows()) {
            return Err(TaxoError::DimMismatch {
                expected: child.nrows() * parent.nrows(),
                got: mask.len(),
            });
        }
        let q = child.dot(&self.w_query);
        let k = parent.dot(&self.w_key);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mix = self.head_mix();
        let mut logits = Array2::from_elem(mask.dim(), self.bias);
        let mut head_scores = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let s_h = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            logits.scaled_add(mix[h], &s_h);
            head_scores.push(s_h);
        }
        let probs = match self.output {
            OutputMode::Sigmoid => logits.mapv(sigmoid),
            OutputMode::RowSoftmax => masked_row_softmax(&logits, mask),
        };
        Ok(Pass {
            q,
            k,
            head_scores,
            mix,
            scores: ScoreMatrix {
                probs,
                mask: mask.clone(),
            },
        })
    }

    /// Score all (child, parent) pairs under an explicit validity mask.
    pub fn forward_masked(
        &self,
        child: ArrayView2<f64>,
        parent: ArrayView2<f64>,
        mask: &Array2<bool>,
    ) -> Result<ScoreMatrix> {
        Ok(self.pass(child, parent, mask)?.scores)
    }

    /// Score every pair; the diagonal is masked when both lists are the same
    /// sequence of types.
    pub fn forward(&self, child: ArrayView2<f64>, parent: ArrayView2<f64>, same_sequence: bool) -> Result<ScoreMatrix> {
        let mask = if same_sequence {
            diagonal_mask(child.nrows())
        } else {
            Array2::from_elem((child.nrows(), parent.nrows()), true)
        };
        self.forward_masked(child, parent, &mask)
    }

    /// Loss and analytic parameter gradients for one batch.
    pub fn loss_and_gradients(
        &self,
        child: ArrayView2<f64>,
        parent: ArrayView2<f64>,
        mask: &Array2<bool>,
        labels: &Array2<bool>,
        pos_weight: f64,
    ) -> Result<(f64, Gradients)> {
        let pass = self.pass(child, parent, mask)?;
        let loss = bce_loss(&pass.scores, labels, pos_weight);
        let g = logit_gradient(&pass.scores, labels, pos_weight, self.output);

        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut d_q = Array2::zeros(pass.q.dim());
        let mut d_k = Array2::zeros(pass.k.dim());
        let mut d_mix = Array1::zeros(self.num_heads);
        for h in 0..self.num_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let coeff = pass.mix[h] * scale;
            d_q.slice_mut(cols).assign(&(g.dot(&pass.k.slice(cols)) * coeff));
            d_k.slice_mut(cols).assign(&(g.t().dot(&pass.q.slice(cols)) * coeff));
            d_mix[h] = (&g * &pass.head_scores[h]).sum();
        }
        let mix_logits = self.trainable_mix.then(|| {
            let mean: f64 = pass.mix.iter().zip(&d_mix).map(|(m, d)| m * d).sum();
            Array1::from_shape_fn(self.num_heads, |h| pass.mix[h] * (d_mix[h] - mean))
        });
        let grads = Gradients {
            w_query: child.t().dot(&d_q),
            w_key: parent.t().dot(&d_k),
            mix_logits,
            bias: g.sum(),
        };
        grads.check_finite()?;
        Ok((loss, grads))
    }

    /// Apply `param -= lr · grad` (or an Adam step when `adam` is given).
    fn apply(&mut self, grads: &Gradients, lr: f64, adam: Option<&mut AdamState>) {
        match adam {
            None => {
                self.w_query.scaled_add(-lr, &grads.w_query);
                self.w_key.scaled_add(-lr, &grads.w_key);
                if let Some(g) = &grads.mix_logits {
                    self.mix_logits.scaled_add(-lr, g);
                }
                self.bias -= lr * grads.bias;
            }
            Some(state) => state.step(self, grads, lr),
        }
    }
}

struct Pass {
    q: Array2<f64>,
    k: Array2<f64>,
    head_scores: Vec<Array2<f64>>,
    mix: Array1<f64>,
    scores: ScoreMatrix,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax1(x: &Array1<f64>) -> Array1<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = x.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

fn masked_row_softmax(logits: &Array2<f64>, mask: &Array2<bool>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for ((l, m), mut o) in logits
        .axis_iter(Axis(0))
        .zip(mask.axis_iter(Axis(0)))
        .zip(out.axis_iter_mut(Axis(0)))
    {
        let max = l
            .iter()
            .zip(m)
            .filter(|(_, &v)| v)
            .map(|(x, _)| *x)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut z = 0.0;
        for ((o, &x), &v) in o.iter_mut().zip(l).zip(m) {
            if v {
                *o = (x - max).exp();
                z += *o;
            }
        }
        o.mapv_inplace(|v| v / z);
    }
    out
}

pub fn diagonal_mask(n: usize) -> Array2<bool> {
    Array2::from_shape_fn((n, n), |(i, j)| i != j)
}

/// Pair probabilities with their validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub probs: Array2<f64>,
    pub mask: Array2<bool>,
}

impl ScoreMatrix {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&v| v).count()
    }

    /// Valid `(child, parent, prob)` triples in row-major order.
    pub fn valid_pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.probs
            .indexed_iter()
            .filter(|(ij, _)| self.mask[*ij])
            .map(|((i, j), &p)| (i, j, p))
    }

    /// Valid probabilities and their gold labels, row-major.
    pub fn flatten_valid(&self, labels: &Array2<bool>) -> (Vec<f64>, Vec<bool>) {
        self.valid_pairs().map(|(i, j, p)| (p, labels[[i, j]])).unzip()
    }
}

/// Weighted BCE averaged over valid pairs.
pub fn bce_loss(scores: &ScoreMatrix, labels: &Array2<bool>, pos_weight: f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, j, p) in scores.valid_pairs() {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total += if labels[[i, j]] {
            -pos_weight * p.ln()
        } else {
            -(1.0 - p).ln()
        };
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Loss against a gold graph whose type order matches the score rows and
/// columns.
pub fn bce_loss_graph(scores: &ScoreMatrix, gold: &TaxonomyGraph, pos_weight: f64) -> f64 {
    bce_loss(scores, &gold.label_matrix(), pos_weight)
}

/// dLoss/dLogit for every pair. Zero on masked pairs and where the clamp is
/// active.
fn logit_gradient(scores: &ScoreMatrix, labels: &Array2<bool>, pos_weight: f64, output: OutputMode) -> Array2<f64> {
    let n = scores.valid_count().max(1) as f64;
    let inside = |p: f64| p > PROB_CLAMP && p < 1.0 - PROB_CLAMP;
    match output {
        OutputMode::Sigmoid => Array2::from_shape_fn(scores.probs.dim(), |ij| {
            let p = scores.probs[ij];
            if !scores.mask[ij] || !inside(p) {
                0.0
            } else if labels[ij] {
                -pos_weight * (1.0 - p) / n
            } else {
                p / n
            }
        }),
        OutputMode::RowSoftmax => {
            let d_prob = Array2::from_shape_fn(scores.probs.dim(), |ij| {
                let p = scores.probs[ij];
                if !scores.mask[ij] || !inside(p) {
                    0.0
                } else if labels[ij] {
                    -pos_weight / (p * n)
                } else {
                    1.0 / ((1.0 - p) * n)
                }
            });
            let mut g = Array2::zeros(scores.probs.dim());
            for i in 0..g.nrows() {
                let row_p = scores.probs.row(i);
                let inner: f64 = row_p.iter().zip(d_prob.row(i)).map(|(p, d)| p * d).sum();
                for j in 0..g.ncols() {
                    if scores.mask[[i, j]] {
                        g[[i, j]] = row_p[j] * (d_prob[[i, j]] - inner);
                    }
                }
            }
            g
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub mix_logits: Option<Array1<f64>>,
    pub bias: f64,
}

impl Gradients {
    fn check_finite(&self) -> Result<()> {
        if !self.w_query.iter().all(|x| x.is_finite()) {
            return Err(TaxoError::NonFinite("w_query gradient"));
        }
        if !self.w_key.iter().all(|x| x.is_finite()) {
            return Err(TaxoError::NonFinite("w_key gradient"));
        }
        if let Some(m) = &self.mix_logits {
            if !m.iter().all(|x| x.is_finite()) {
                return Err(TaxoError::NonFinite("head_mix gradient"));
            }
        }
        if !self.bias.is_finite() {
            return Err(TaxoError::NonFinite("bias gradient"));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        let sq = |a: &Array2<f64>| a.iter().map(|x| x * x).sum::<f64>();
        let mix = self
            .mix_logits
            .as_ref()
            .map(|m| m.iter().map(|x| x * x).sum::<f64>())
            .unwrap_or(0.0);
        (sq(&self.w_query) + sq(&self.w_key) + mix + self.bias * self.bias).sqrt()
    }
}

/// Full-matrix gradients against a gold graph (diagonal masked).
pub fn gradients(
    head: &AttentionHead,
    embs: ArrayView2<f64>,
    gold: &TaxonomyGraph,
    pos_weight: f64,
) -> Result<Gradients> {
    let mask = diagonal_mask(embs.nrows());
    Ok(head
        .loss_and_gradients(embs, embs, &mask, &gold.label_matrix(), pos_weight)?
        .1)
}

// ---------------------------------------------------------------------------
// Training

/// Linear warm-up over the first `ceil(warmup_fraction · total)` steps, then
/// cosine decay to zero.
pub fn lr_schedule(step: usize, total_steps: usize, lr_max: f64, warmup_fraction: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(TaxoError::ZeroSteps);
    }
    if step >= total_steps {
        return Err(TaxoError::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    // The small offset keeps e.g. 0.1 · 30 = 3.0000000000000004 from rounding up.
    let warmup = ((warmup_fraction * total_steps as f64 - 1e-9).ceil().max(0.0) as usize).min(total_steps);
    if step < warmup {
        return Ok(lr_max * (step + 1) as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum PosWeight {
    /// `#valid negatives / #positives` on the training partition.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub num_heads: usize,
    pub epochs: usize,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub pos_weight: PosWeight,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `min(model_dim, 512)`.
    #[serde(default)]
    pub proj_dim: Option<usize>,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub output: OutputMode,
    #[serde(default)]
    pub trainable_mix: bool,
}

fn default_warmup() -> f64 {
    DEFAULT_WARMUP_FRACTION
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 16,
            num_heads: 8,
            epochs: 7,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            pos_weight: PosWeight::Auto,
            seed: 0,
            proj_dim: None,
            optimizer: Optimizer::Sgd,
            output: OutputMode::Sigmoid,
            trainable_mix: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TaxoError::InvalidConfig(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.epochs < 1 {
            return bad("epochs must be ≥ 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be ≥ 1");
        }
        if self.num_heads < 1 {
            return bad("num_heads must be ≥ 1");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must be in [0, 1]");
        }
        if let PosWeight::Fixed(w) = self.pos_weight {
            if !(w.is_finite() && w >= 0.0) {
                return bad("pos_weight must be finite and ≥ 0");
            }
        }
        if let Some(p) = self.proj_dim {
            if p == 0 || !p.is_multiple_of(self.num_heads) {
                return bad("proj_dim must be a positive multiple of num_heads");
            }
        }
        Ok(())
    }

    /// Projection width for a given embedding size: the configured value, or
    /// `min(d, 512)` rounded down to a multiple of the head count.
    pub fn resolved_proj_dim(&self, model_dim: usize) -> usize {
        self.proj_dim.unwrap_or_else(|| {
            let p = model_dim.min(MAX_DEFAULT_PROJ_DIM);
            (p / self.num_heads).max(1) * self.num_heads
        })
    }

    /// Cartesian product over the searched hyper-parameters, other fields
    /// copied from `base`.
    pub fn grid(
        base: &TrainConfig,
        learning_rates: &[f64],
        batch_sizes: &[usize],
        heads: &[usize],
        epochs: &[usize],
    ) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &learning_rate in learning_rates {
            for &batch_size in batch_sizes {
                for &num_heads in heads {
                    for &e in epochs {
                        out.push(TrainConfig {
                            learning_rate,
                            batch_size,
                            num_heads,
                            epochs: e,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

struct AdamState {
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(head: &AttentionHead) -> Self {
        let zero = Gradients {
            w_query: Array2::zeros(head.w_query.dim()),
            w_key: Array2::zeros(head.w_key.dim()),
            mix_logits: Some(Array1::zeros(head.num_heads)),
            bias: 0.0,
        };
        Self {
            step: 0,
            m: zero.clone(),
            v: zero,
        }
    }

    fn step(&mut self, head: &mut AttentionHead, g: &Gradients, lr: f64) {
        self.step += 1;
        let (b1, b2, eps) = (Self::BETA1, Self::BETA2, Self::EPS);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        ndarray::Zip::from(&mut head.w_query)
            .and(&mut self.m.w_query)
            .and(&mut self.v.w_query)
            .and(&g.w_query)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut head.w_key)
            .and(&mut self.m.w_key)
            .and(&mut self.v.w_key)
            .and(&g.w_key)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        if let (Some(gm), Some(mm), Some(vm)) = (&g.mix_logits, &mut self.m.mix_logits, &mut self.v.mix_logits) {
            ndarray::Zip::from(&mut head.mix_logits)
                .and(mm)
                .and(vm)
                .and(gm)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        update(&mut head.bias, &mut self.m.bias, &mut self.v.bias, g.bias);
    }
}

/// Embedding rows for `types`, in order, widened to f64.
pub fn embedding_matrix(store: &EmbeddingStore, types: &[String]) -> Result<Array2<f64>> {
    let d = store.dim();
    let mut m = Array2::zeros((types.len(), d));
    for (i, t) in types.iter().enumerate() {
        let row = store.get(t).ok_or_else(|| TaxoError::MissingEmbedding(t.clone()))?;
        m.row_mut(i)
            .iter_mut()
            .zip(row)
            .for_each(|(dst, &src)| *dst = f64::from(src));
    }
    Ok(m)
}

/// `#valid negatives / #positives` with the diagonal excluded; 1 without
/// positives.
pub fn auto_pos_weight(graph: &TaxonomyGraph) -> f64 {
    let n = graph.len();
    let pos = graph.edges().len();
    if pos == 0 {
        return 1.0;
    }
    let valid = n * n.saturating_sub(1);
    (valid - pos) as f64 / pos as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_auc: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best ranking AUC.
    pub head: AttentionHead,
    pub final_head: AttentionHead,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub pos_weight: f64,
}

impl TrainOutcome {
    /// Validation AUC of the selected epoch, falling back to training AUC
    /// when no validation graph was given.
    pub fn best_auc(&self) -> Option<f64> {
        let r = &self.history[self.best_epoch - 1];
        r.val_auc.or(r.train_auc)
    }
}

fn evaluate(
    head: &AttentionHead,
    embs: &Array2<f64>,
    graph: &TaxonomyGraph,
    pos_weight: f64,
) -> Result<(f64, Option<f64>)> {
    let scores = head.forward(embs.view(), embs.view(), true)?;
    let labels = graph.label_matrix();
    let loss = bce_loss(&scores, &labels, pos_weight);
    let (p, y) = scores.flatten_valid(&labels);
    Ok((loss, roc_auc(&p, &y).ok()))
}

/// Train a head on `train`, tracking the best epoch by validation ROC AUC
/// (training AUC when `validation` is `None`).
///
/// Each step scores a block of `batch_size` child rows against every parent
/// in the partition; blocks come from a seeded shuffle per epoch.
pub fn train(
    train: &TaxonomyGraph,
    validation: Option<&TaxonomyGraph>,
    store: &EmbeddingStore,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let x = embedding_matrix(store, train.types())?;
    let x_val = validation.map(|v| embedding_matrix(store, v.types())).transpose()?;
    let proj_dim = config.resolved_proj_dim(store.dim());
    let mut head = AttentionHead::init(store.dim(), proj_dim, config.num_heads, config.seed)?;
    head.trainable_mix = config.trainable_mix;
    head.output = config.output;

    let pos_weight = match config.pos_weight {
        PosWeight::Auto => auto_pos_weight(train),
        PosWeight::Fixed(w) => w,
    };
    let labels = train.label_matrix();
    let n = train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size).max(1);
    let total_steps = steps_per_epoch * config.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut adam = (config.optimizer == Optimizer::Adam).then(|| AdamState::new(&head));

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, AttentionHead)> = None;
    let mut step = 0;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for block in order.chunks(config.batch_size) {
            let rows = x.select(Axis(0), block);
            let block_labels = labels.select(Axis(0), block);
            let mask = Array2::from_shape_fn((block.len(), n), |(r, j)| block[r] != j);
            let (_, grads) = head.loss_and_gradients(rows.view(), x.view(), &mask, &block_labels, pos_weight)?;
            let lr = lr_schedule(step, total_steps, config.learning_rate, config.warmup_fraction)?;
            head.apply(&grads, lr, adam.as_mut());
            step += 1;
        }
        if n == 0 {
            step += 1;
        }
        let (train_loss, train_auc) = evaluate(&head, &x, train, pos_weight)?;
        let (val_loss, val_auc) = match (validation, &x_val) {
            (Some(v), Some(xv)) => {
                let (l, a) = evaluate(&head, xv, v, pos_weight)?;
                (Some(l), a)
            }
            _ => (None, None),
        };
        let rank = if validation.is_some() { val_auc } else { train_auc };
        let rank = rank.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| rank > *b) {
            best = Some((rank, epoch, head.clone()));
        }
        log::debug!("epoch {epoch}: train loss {train_loss:.5}, train auc {train_auc:?}, val auc {val_auc:?}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_auc,
            val_loss,
            val_auc,
        });
    }
    let (_, best_epoch, best_head) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        head: best_head,
        final_head: head,
        best_epoch,
        history,
        pos_weight,
    })
}

#[derive(Debug, Clone)]
pub struct GridEntry {
    pub config: TrainConfig,
    pub auc: Option<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best_index: usize,
    pub best: TrainOutcome,
    pub leaderboard: Vec<GridEntry>,
    pub split: TypeSplit,
}

/// Train every config on one shared type split and keep the best validation
/// ROC AUC; ties go to the earlier config.
pub fn grid_search(
    graph: &TaxonomyGraph,
    store: &EmbeddingStore,
    configs: &[TrainConfig],
    split_ratio: f64,
    split_seed: u64,
) -> Result<GridResult> {
    if configs.is_empty() {
        return Err(TaxoError::NoConfigs);
    }
    let split = split_types(graph, split_ratio, split_seed)?;
    let mut leaderboard = Vec::with_capacity(configs.len());
    let mut best: Option<(usize, TrainOutcome)> = None;
    for (i, config) in configs.iter().enumerate() {
        let outcome = train(&split.train, Some(&split.validation), store, config)?;
        let auc = outcome.history[outcome.best_epoch - 1].val_auc;
        leaderboard.push(GridEntry {
            config: config.clone(),
            auc,
            best_epoch: outcome.best_epoch,
        });
        let key = auc.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((j, _)) => key > leaderboard[*j].auc.unwrap_or(f64::NEG_INFINITY),
        };
        if better {
            best = Some((i, outcome));
        }
    }
    let (best_index, best) = best.expect("configs non-empty");
    Ok(GridResult {
        best_index,
        best,
        leaderboard,
        split,
    })
}

// ---------------------------------------------------------------------------
// Thresholds and prediction

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ThresholdRule {
    /// Threshold maximizing F1 on the validation pairs.
    ValF1,
    /// Keep as many edges as the training graph's density implies.
    SparsityMatched { train_density: f64 },
}

/// Scan every distinct validation probability `t` (predict positive when
/// `p ≥ t`) and return the one with the highest F1, preferring the smallest
/// threshold on ties. If F1 is zero everywhere the largest candidate is
/// returned.
pub fn val_f1_threshold(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(TaxoError::EmptyValidation);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));

    // F1 = 2·tp / (predicted + positives); compared exactly as fractions.
    let mut best: Option<(usize, usize, f64)> = None;
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = probs[order[i]];
        while i < order.len() && probs[order[i]] == t {
            tp += labels[order[i]] as usize;
            predicted += 1;
            i += 1;
        }
        let denom = predicted + n_pos;
        let take = match best {
            None => true,
            Some((btp, bden, _)) => (tp as u128) * (bden as u128) >= (btp as u128) * (denom as u128),
        };
        if take {
            best = Some((tp, denom, t));
        }
    }
    let (btp, _, t) = best.expect("non-empty");
    if btp == 0 {
        return Ok(probs[order[0]]);
    }
    Ok(t)
}

/// Number of edges to keep: `round(train_density · n_test_pairs)`, clamped.
pub fn sparsity_edge_count(train_density: f64, n_test_pairs: usize) -> usize {
    ((train_density * n_test_pairs as f64).round().max(0.0) as usize).min(n_test_pairs)
}

/// Threshold that leaves exactly `k` of `scores` strictly above it when the
/// cut is tie-free: the midpoint between the k-th and (k+1)-th largest.
pub fn threshold_for_top_k(scores: &[f64], k: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(TaxoError::NoTestPairs);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(sorted.len());
    Ok(match k {
        0 => sorted[0],
        k if k == sorted.len() => sorted[k - 1] - 1.0,
        k => 0.5 * (sorted[k - 1] + sorted[k]),
    })
}

/// Pick a decision threshold. `val_*` feed [`ThresholdRule::ValF1`];
/// `test_scores` and `n_test_pairs` feed [`ThresholdRule::SparsityMatched`].
pub fn select_threshold(
    rule: ThresholdRule,
    val_probs: &[f64],
    val_labels: &[bool],
    test_scores: &[f64],
    n_test_pairs: usize,
) -> Result<f64> {
    match rule {
        ThresholdRule::ValF1 => val_f1_threshold(val_probs, val_labels),
        ThresholdRule::SparsityMatched { train_density } => {
            if n_test_pairs == 0 {
                return Err(TaxoError::NoTestPairs);
            }
            threshold_for_top_k(test_scores, sparsity_edge_count(train_density, n_test_pairs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeSelection {
    /// Every valid pair with probability strictly above the threshold.
    Above(f64),
    /// The `k` highest-scoring valid pairs; ties in row-major order.
    TopK(usize),
}

/// Infer the taxonomy over `types` (diagonal excluded).
pub fn predict_taxonomy(
    head: &AttentionHead,
    store: &EmbeddingStore,
    types: &[String],
    selection: EdgeSelection,
) -> Result<(TaxonomyGraph, ScoreMatrix)> {
    let x = embedding_matrix(store, types)?;
    let scores = head.forward(x.view(), x.view(), true)?;
    let edges: Vec<(usize, usize)> = match selection {
        EdgeSelection::Above(t) => scores
            .valid_pairs()
            .filter(|&(_, _, p)| p > t)
            .map(|(i, j, _)| (i, j))
            .collect(),
        EdgeSelection::TopK(k) => {
            let mut pairs: Vec<(usize, usize, f64)> = scores.valid_pairs().collect();
            // stable sort keeps row-major order among equal scores
            pairs.sort_by(|a, b| b.2.total_cmp(&a.2));
            pairs.into_iter().take(k).map(|(i, j, _)| (i, j)).collect()
        }
    };
    Ok((TaxonomyGraph::new(types.to_vec(), edges)?, scores))
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model_dim: usize,
    pub proj_dim: usize,
    pub num_heads: usize,
    pub trainable_mix: bool,
    pub output: OutputMode,
    pub seed: u64,
    #[serde(default)]
    pub config: Option<TrainConfig>,
}

/// Serialize a head: magic, u32 LE header length, JSON header, then f32 LE
/// blocks for `w_query`, `w_key` (row-major), `mix_logits` and `bias`.
/// Parameters are rounded to f32.
pub fn checkpoint_bytes(head: &AttentionHead, seed: u64, config: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&CheckpointHeader {
        version: CHECKPOINT_VERSION,
        model_dim: head.model_dim(),
        proj_dim: head.proj_dim(),
        num_heads: head.num_heads,
        trainable_mix: head.trainable_mix,
        output: head.output,
        seed,
        config: config.cloned(),
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + 4 * (2 * head.w_query.len() + head.num_heads + 1));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let params = head
        .w_query
        .iter()
        .chain(head.w_key.iter())
        .chain(head.mix_logits.iter())
        .chain(std::iter::once(&head.bias));
    for &p in params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn head_from_checkpoint(bytes: &[u8]) -> Result<(AttentionHead, CheckpointHeader)> {
    let bad = |m: &str| TaxoError::BadCheckpoint(m.to_string());
    let mut cur = bytes;
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(|_| bad("bad magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut len = [0u8; 4];
    cur.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
    let len = u32::from_le_bytes(len) as usize;
    if cur.len() < len {
        return Err(bad("truncated header"));
    }
    let (header, body) = cur.split_at(len);
    let header: CheckpointHeader = serde_json::from_slice(header)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    let (d, p, h) = (header.model_dim, header.proj_dim, header.num_heads);
    if h == 0 || !p.is_multiple_of(h) || d == 0 {
        return Err(bad("inconsistent dimensions"));
    }
    let expected = 4 * (2 * d * p + h + 1);
    if body.len() != expected {
        return Err(bad(&format!(
            "expected {expected} parameter bytes, found {}",
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let w_query = Array2::from_shape_vec((d, p), take(d * p)).map_err(|e| bad(&e.to_string()))?;
    let w_key = Array2::from_shape_vec((d, p), take(d * p)).map_err(|e| bad(&e.to_string()))?;
    let mix_logits = Array1::from(take(h));
    let bias = take(1)[0];
    let head = AttentionHead {
        num_heads: h,
        w_query,
        w_key,
        mix_logits,
        trainable_mix: header.trainable_mix,
        bias,
        output: header.output,
    };
    head.validate()?;
    Ok((head, header))
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    head: &AttentionHead,
    seed: u64,
    config: Option<&TrainConfig>,
) -> Result<()> {
    fs::write(path, checkpoint_bytes(head, seed, config)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(AttentionHead, CheckpointHeader)> {
    head_from_checkpoint(&fs::read(path)?)
}
