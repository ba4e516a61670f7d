//! Sentence-level argumentative structure prediction.
//!
//! An essay is a sequence of sentences; each sentence points at one target
//! sentence (or at itself, for the major claim and for non-argumentative
//! sentences). The crate provides:
//!
//! * [`tree`]: the head-vector tree model and its topological derivations
//!   (component types, depth categories, descendant sets, shape statistics);
//! * [`corpus`]: JSONL corpus I/O, segment-to-sentence conversion, selective
//!   sampling and training-set construction;
//! * [`embedding`]: sentence embedding files, deterministic pseudo-embeddings
//!   and the sentence-position feature;
//! * [`model`]: the biaffine linker (dense, BiLSTM, projections, biaffine
//!   scorer, auxiliary heads), its losses, gradients and training loop;
//! * [`decoder`]: maximum-arborescence decoding with a virtual root;
//! * [`eval`]: link, structure and significance metrics;
//! * [`experiment`]: repeated-run experiments with persisted artifacts;
//! * [`report`]: comparison tables across experiment directories.

pub mod corpus;
pub mod decoder;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod report;
pub mod tree;

pub use error::{Error, Result};
