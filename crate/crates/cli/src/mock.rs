//! Deterministic in-process embedder used with `--mock-llm`.
//!
//! Feature hashing over word tokens and character trigrams: texts sharing
//! words land close together, which is enough to exercise retrieval offline.

use ontolearn::embedstore::{EmbeddingStore, Pooling, StoreError};
use ontolearn::text::normalize;
use sha2::{Digest, Sha256};

pub const DEFAULT_DIM: usize = 64;

pub fn hash_embed(text: &str, dim: usize) -> Vec<f32> {
    let folded = normalize(text);
    let mut v = vec![0f32; dim];
    let mut add = |feature: &str, weight: f32| {
        let h = Sha256::digest(feature.as_bytes());
        let idx = (u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % dim as u64) as usize;
        v[idx] += if h[8] & 1 == 0 { weight } else { -weight };
    };
    for tok in folded.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        add(&format!("w:{tok}"), 1.0);
    }
    let padded: Vec<char> = format!(" {folded} ").chars().collect();
    for w in padded.windows(3) {
        add(&format!("c:{}", w.iter().collect::<String>()), 0.5);
    }
    v
}

pub fn hash_store(
    model: &str,
    inputs: &[(String, String)],
    dim: usize,
    pooling: Pooling,
    normalize: bool,
) -> Result<EmbeddingStore, StoreError> {
    let rows = inputs.iter().map(|(id, text)| (id.clone(), hash_embed(text, dim)));
    EmbeddingStore::from_rows(model, dim, pooling, normalize, rows)
}
