//! Ontology learning toolkit.
//!
//! The crate covers three tasks over challenge-style ontology data:
//!
//! * term and type extraction from documents (`corpus`, `embedstore`, `fewshot`),
//! * term typing, either retrieval-augmented or zero-shot (`fewshot`, `zeroshot`),
//! * taxonomy discovery with a trainable cross-attention head over frozen
//!   type embeddings (`taxo`),
//!
//! plus the scoring harness shared by all of them (`eval`).

pub mod corpus;
pub mod embedstore;
pub mod eval;
pub mod fewshot;
pub mod service;
pub mod taxo;
pub mod text;
pub mod zeroshot;

pub use corpus::{Corpus, CorpusError, CorpusPaths, Document, TermDocIndex};
pub use embedstore::{EmbeddingStore, Neighbor, Pooling, StoreError};
pub use eval::{EvalError, Prf};
pub use fewshot::{ExtractionResult, InstructionPair, Prompt};
pub use service::ServiceError;
pub use taxo::{AttentionHead, TaxoError, TaxonomyGraph, TrainConfig};
pub use zeroshot::{MemberPrediction, TemplateStyle, TypePrediction, ZeroShotError};
