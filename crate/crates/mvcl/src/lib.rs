//! Legal case retrieval at desk scale: an interaction-focused matching
//! network over long case documents, a legal-element sentence indicator,
//! case-view and element-view contrastive objectives, lexical baselines,
//! macro metrics, and pairwise-preference-to-ranking conversion — all on a
//! self-contained reverse-mode autodiff core with finite-difference
//! gradient verification.
//!
//! The subsystems, bottom-up:
//!
//! - [`autodiff`]: f64 tensors, the op tape, Adam, `gradcheck`.
//! - [`corpus`]: case documents, triples, annotations, jsonl loaders.
//! - [`encoder`]: lookup / recurrent / fixture token encoders.
//! - [`matcher`]: bidirectional attention, strengthened representations,
//!   recurrent aggregation, the difference-MLP classifier.
//! - [`indicator`]: the independently trained element sentence classifier.
//! - [`contrastive`]: attention pooling and the two contrastive losses.
//! - [`trainer`]: the weighted joint objective, scheduling, checkpoints.
//! - [`ranker`]: pairwise preferences into ranked lists.
//! - [`evalkit`]: macro metrics and the TF-IDF / BM25 baselines.
//! - [`harness`]: synthetic planted-relevance corpora and the
//!   whole-pipeline gradient check.

pub mod autodiff;
pub mod contrastive;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod harness;
pub mod indicator;
pub mod manifest;
pub mod matcher;
pub mod ranker;
pub mod rng;
pub mod rnn;
pub mod trainer;

pub use error::{Error, Result};
