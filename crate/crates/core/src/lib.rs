//! Data preparation, sparse text features and evaluation metrics shared by
//! the classical and transformer pipelines.
//!
//! - [`corpus`]: Kaggle-format CSV ingestion, text normalization, dedup and
//!   stratified splitting.
//! - [`features`]: tokenization, vocabulary and TF-IDF / count vectors.
//! - [`eval`]: confusion matrices, precision/recall/F1, ROC curves and AUC,
//!   report serialization and comparison tables.
//! - [`seed`]: named random substreams derived from one root seed.
//! - [`synthetic`]: generator for Kaggle-shaped tweet corpora used by tests
//!   and benchmarks.

pub mod corpus;
pub mod eval;
pub mod features;
pub mod seed;
pub mod synthetic;

pub use corpus::{CleanRecord, Dataset, RawRecord, SplitPair};
pub use eval::{ConfusionMatrix, EvalReport};
pub use features::{SparseVector, TfIdfModel, TokenSeq};
