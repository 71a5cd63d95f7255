//! Dense embedding store: file format, normalization, cosine k-NN and the
//! embeddings-service fetcher.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "EMBSTOR1"                8 bytes
//! header length             u32
//! header                    UTF-8 JSON {"version","model","dim","count","pooling","l2_normalized"}
//! count × record            u16 id length, id bytes, dim × f32
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::service::{ServiceClient, ServiceError};

pub const STORE_MAGIC: &[u8; 8] = b"EMBSTOR1";
pub const STORE_VERSION: u32 = 1;
/// Row-norm tolerance for stores flagged as L2-normalized.
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported store version {0}")]
    BadVersion(u32),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("truncated record {index}")]
    Truncated { index: usize },
    #[error("trailing bytes after {count} records")]
    TrailingBytes { count: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("id {0:?} longer than 65535 bytes")]
    IdTooLong(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("matrix has {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("row {id:?} has norm {norm}, store is flagged as L2-normalized")]
    NotNormalized { id: String, norm: f64 },
    #[error("empty vector")]
    EmptyVector,
    #[error("empty store")]
    EmptyStore,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no embedding for {0:?}")]
    MissingId(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    LastToken,
}

/// Row-major `ids.len() × dim` matrix of `f32` with its provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    model_name: String,
    dim: usize,
    pooling: Pooling,
    l2_normalized: bool,
    ids: Vec<String>,
    matrix: Vec<f32>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    version: u32,
    model: String,
    dim: usize,
    count: usize,
    pooling: Pooling,
    l2_normalized: bool,
}

impl EmbeddingStore {
    pub fn new(
        model_name: impl Into<String>,
        dim: usize,
        pooling: Pooling,
        l2_normalized: bool,
        ids: Vec<String>,
        matrix: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        if matrix.len() != ids.len() * dim {
            return Err(StoreError::Shape {
                expected: ids.len() * dim,
                got: matrix.len(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.len() > u16::MAX as usize {
                return Err(StoreError::IdTooLong(id.clone()));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        let store = Self {
            model_name: model_name.into(),
            dim,
            pooling,
            l2_normalized,
            ids,
            matrix,
            index,
        };
        if l2_normalized {
            for (i, id) in store.ids.iter().enumerate() {
                let norm = norm(store.row(i));
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(StoreError::NotNormalized { id: id.clone(), norm });
                }
            }
        }
        Ok(store)
    }

    /// Build from (id, vector) rows, optionally L2-normalizing each row.
    pub fn from_rows<I>(
        model_name: impl Into<String>,
        dim: usize,
        pooling: Pooling,
        normalize: bool,
        rows: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        let mut ids = Vec::new();
        let mut matrix = Vec::new();
        for (id, v) in rows {
            if v.len() != dim {
                return Err(StoreError::DimMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if normalize {
                matrix.extend(l2_normalize(&v)?);
            } else {
                matrix.extend(v);
            }
            ids.push(id);
        }
        Self::new(model_name, dim, pooling, normalize, ids, matrix)
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn l2_normalized(&self) -> bool {
        self.l2_normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.matrix.chunks_exact(self.dim))
    }

    /// Sub-store with the given ids in the given order.
    pub fn select<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let mut matrix = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let row = self
                .get(id.as_ref())
                .ok_or_else(|| StoreError::MissingId(id.as_ref().to_string()))?;
            matrix.extend_from_slice(row);
        }
        Self::new(
            self.model_name.clone(),
            self.dim,
            self.pooling,
            self.l2_normalized,
            ids.iter().map(|s| s.as_ref().to_string()).collect(),
            matrix,
        )
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&StoreHeader {
            version: STORE_VERSION,
            model: self.model_name.clone(),
            dim: self.dim,
            count: self.ids.len(),
            pooling: self.pooling,
            l2_normalized: self.l2_normalized,
        })
        .map_err(|e| StoreError::BadHeader(e.to_string()))?;
        w.write_all(STORE_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for (id, row) in self.rows() {
            w.write_all(&(id.len() as u16).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in row {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| StoreError::BadMagic)?;
        if &magic != STORE_MAGIC {
            return Err(StoreError::BadMagic);
        }
        let header_len = read_u32(&mut cur).ok_or_else(|| StoreError::BadHeader("truncated".into()))?;
        if cur.len() < header_len as usize {
            return Err(StoreError::BadHeader("truncated".into()));
        }
        let (header, mut cur) = cur.split_at(header_len as usize);
        let header: StoreHeader = serde_json::from_slice(header).map_err(|e| StoreError::BadHeader(e.to_string()))?;
        if header.version != STORE_VERSION {
            return Err(StoreError::BadVersion(header.version));
        }
        if header.dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        let mut ids = Vec::with_capacity(header.count.min(1 << 20));
        let mut matrix = Vec::with_capacity((header.count * header.dim).min(1 << 26));
        for index in 0..header.count {
            let truncated = || StoreError::Truncated { index };
            let len = read_u16(&mut cur).ok_or_else(truncated)? as usize;
            if cur.len() < len + 4 * header.dim {
                return Err(truncated());
            }
            let (id, rest) = cur.split_at(len);
            let id = std::str::from_utf8(id)
                .map_err(|_| StoreError::BadHeader(format!("record {index}: id is not UTF-8")))?;
            ids.push(id.to_string());
            let (row, rest) = rest.split_at(4 * header.dim);
            matrix.extend(
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            );
            cur = rest;
        }
        if !cur.is_empty() {
            return Err(StoreError::TrailingBytes { count: header.count });
        }
        Self::new(
            header.model,
            header.dim,
            header.pooling,
            header.l2_normalized,
            ids,
            matrix,
        )
    }
}

fn read_u32(cur: &mut &[u8]) -> Option<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn read_u16(cur: &mut &[u8]) -> Option<u16> {
    let mut b = [0u8; 2];
    cur.read_exact(&mut b).ok()?;
    Some(u16::from_le_bytes(b))
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    EmbeddingStore::from_bytes(&fs::read(path)?)
}

pub fn write_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = io::BufWriter::new(file);
    store.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
}

pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    if v.is_empty() {
        return Err(StoreError::EmptyVector);
    }
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(StoreError::ZeroNorm);
    }
    Ok(v.iter().map(|&x| (f64::from(x) / n) as f32).collect())
}

pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(StoreError::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(StoreError::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
}

/// Cosine similarity of `query` against every row. Zero rows score 0.
pub fn cosine_scores(store: &EmbeddingStore, query: &[f32]) -> Result<Vec<f64>> {
    if query.len() != store.dim() {
        return Err(StoreError::DimMismatch {
            expected: store.dim(),
            got: query.len(),
        });
    }
    let qn = norm(query);
    if qn == 0.0 {
        return Err(StoreError::ZeroNorm);
    }
    Ok(store
        .rows()
        .map(|(_, row)| {
            let rn = norm(row);
            if rn == 0.0 {
                0.0
            } else {
                (dot(query, row) / (qn * rn)).clamp(-1.0, 1.0)
            }
        })
        .collect())
}

/// Exact top-`k` rows by cosine similarity, ties broken by ascending id.
pub fn knn(store: &EmbeddingStore, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(StoreError::ZeroK);
    }
    if store.is_empty() {
        return Err(StoreError::EmptyStore);
    }
    let scores = cosine_scores(store, query)?;
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| store.ids[a].cmp(&store.ids[b]))
    });
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| Neighbor {
            id: store.ids[i].clone(),
            score: scores[i],
        })
        .collect())
}

/// Options for [`fetch_embeddings`].
#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub model_name: String,
    pub batch_size: usize,
    pub pooling: Pooling,
    pub normalize: bool,
    /// Dimension recorded for an empty input list, where the service is never
    /// asked. Ignored otherwise.
    pub dim_hint: Option<usize>,
}

impl FetchOptions {
    pub const DEFAULT_BATCH_SIZE: usize = 32;

    pub fn new(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            batch_size: Self::DEFAULT_BATCH_SIZE,
            pooling: Pooling::LastToken,
            normalize: true,
            dim_hint: None,
        }
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f32>,
}

/// Embed `(id, text)` pairs through an OpenAI-compatible embeddings service,
/// preserving input order.
pub fn fetch_embeddings(
    client: &ServiceClient,
    inputs: &[(String, String)],
    opts: &FetchOptions,
) -> Result<EmbeddingStore> {
    let batch_size = opts.batch_size.max(1);
    let mut rows: Vec<(String, Vec<f32>)> = Vec::with_capacity(inputs.len());
    let mut dim = None;
    for (batch, chunk) in inputs.chunks(batch_size).enumerate() {
        let texts: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
        let resp: EmbeddingResponse = client
            .post_json(&EmbeddingRequest {
                model: &opts.model_name,
                input: &texts,
            })
            .map_err(|e| e.with_batch(batch))?;
        if resp.data.len() != chunk.len() {
            return Err(ServiceError::CountMismatch {
                batch,
                sent: chunk.len(),
                received: resp.data.len(),
            }
            .into());
        }
        let mut slots: Vec<Option<Vec<f32>>> = vec![None; chunk.len()];
        for datum in resp.data {
            let slot = slots
                .get_mut(datum.index)
                .ok_or_else(|| ServiceError::InvalidResponse {
                    batch: Some(batch),
                    message: format!("index {} out of range", datum.index),
                })?;
            if slot.replace(datum.embedding).is_some() {
                return Err(ServiceError::InvalidResponse {
                    batch: Some(batch),
                    message: format!("index {} repeated", datum.index),
                }
                .into());
            }
        }
        for ((id, _), v) in chunk.iter().zip(slots) {
            let v = v.expect("every slot filled: counts match and indices are unique");
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(StoreError::DimMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
            rows.push((id.clone(), v));
        }
    }
    let dim = dim.or(opts.dim_hint).unwrap_or(1);
    EmbeddingStore::from_rows(opts.model_name.clone(), dim, opts.pooling, opts.normalize, rows)
}
