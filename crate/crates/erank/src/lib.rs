//! Entity retrieval over knowledge-graph triples.
//!
//! The crate covers the whole ranking pipeline:
//!
//! * [`corpus`] — triple parsing, the five-field entity schema and
//!   collection statistics;
//! * [`index`] — an immutable fielded positional index with unigram,
//!   ordered-bigram and unordered-window lookups;
//! * [`textrank`] — LM / BM25 / coordinate-match / cosine / SDM / FSDM
//!   scoring, candidate generation and feature extraction;
//! * [`entmatch`] — entity-mention and embedding-based query/entity match
//!   features;
//! * [`transe`] — translation-based entity/relation embedding training;
//! * [`ltr`] — linear learning-to-rank (coordinate ascent, pairwise SVM)
//!   with cross-validation;
//! * [`evalkit`] — MAP/P@K, permutation significance tests, win/tie/loss
//!   and weight-distribution reports;
//! * [`pipeline`] — config-driven orchestration behind the `erank` binary.

pub mod corpus;
pub mod entmatch;
pub mod error;
pub mod evalkit;
pub mod index;
pub mod ltr;
pub mod pipeline;
pub mod textrank;
pub mod transe;

pub use error::{Error, Result};
