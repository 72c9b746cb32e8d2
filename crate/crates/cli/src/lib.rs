//! Orchestration behind the `tweetsift` binary: data preparation, training,
//! evaluation, comparison and the run manifest.

use std::path::PathBuf;

pub mod audit;
pub mod config;
pub mod manifest;
pub mod pipeline;

pub use audit::Audit;
pub use config::{ModelName, RunConfig};
pub use pipeline::{compare, evaluate, load_prepared, prepare, roc, train, Side};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown model `{name}`; valid names: {valid}")]
    UnknownModel { name: String, valid: String },
    #[error("input file {} does not exist", .0.display())]
    MissingInput(PathBuf),
    #[error("`{model}` needs a trained `{teacher}` teacher in {}; run `tweetsift train --model {teacher}` first", .dir.display())]
    MissingTeacher { model: String, teacher: String, dir: PathBuf },
    #[error("no trained `{model}` in {}; run `tweetsift train --model {model}` first", .dir.display())]
    MissingModel { model: String, dir: PathBuf },
    #[error("prepared data in {} is missing or stale: {reason}", .dir.display())]
    NotPrepared { dir: PathBuf, reason: String },
    #[error(transparent)]
    Corpus(#[from] tweetsift_core::corpus::CorpusError),
    #[error(transparent)]
    Features(#[from] tweetsift_core::features::FeatureError),
    #[error(transparent)]
    Eval(#[from] tweetsift_core::eval::EvalError),
    #[error(transparent)]
    Classical(#[from] tweetsift_classical::ClassicalError),
    #[error(transparent)]
    Transformer(#[from] tweetsift_transformer::TransformerError),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
