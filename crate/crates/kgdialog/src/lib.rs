//! Knowledge-grounded dialog toolkit.
//!
//! Implements the three stages of knowledge-grounded task-oriented dialog over
//! noisy speech transcripts:
//!
//! 1. **Detection** — deciding whether a user turn seeks knowledge that only an
//!    FAQ document can answer, with ASR n-best fusion, ensembling, and
//!    F1-optimal decision-threshold tuning ([`detection`]).
//! 2. **Selection** — hierarchical entity-then-document retrieval with a
//!    candidate beam over entities (threshold `t`) and an entity-score exponent
//!    `gamma` ([`selection`]).
//! 3. **Generation** — grounded response decoding: direct beam search, shallow
//!    fusion, density ratio, and noisy-channel combinations (reranking and
//!    online decoding) ([`decoding`]).
//!
//! All scoring runs over pluggable probability models ([`models`]); the
//! bundled desk-scale reference scorers (interpolated absolute-discount n-gram
//! LM, naive Bayes channel model, hashed logistic relevance classifiers) make
//! every algorithm trainable in seconds and checkable against brute-force
//! oracles. [`corpus`] holds the data model and file formats, [`textnorm`] the
//! written-to-spoken text normalization, [`eval`] the ranking metrics,
//! [`augment`] the knowledge-base-driven training-data augmentation,
//! [`synth`] a synthetic data generator for end-to-end smoke testing, and
//! [`pipeline`] the seeded end-to-end orchestration used by the CLI.

pub mod augment;
pub mod corpus;
pub mod decoding;
pub mod detection;
pub mod error;
pub mod eval;
pub mod models;
pub mod numeric;
pub mod pipeline;
pub mod selection;
pub mod synth;
pub mod textnorm;

pub use error::{Error, Result};
