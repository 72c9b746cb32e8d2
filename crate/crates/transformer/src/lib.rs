//! Toy-scale transformer encoders for binary tweet classification.

pub mod config;
pub mod mlm;
pub mod model;
pub mod tokenizer;
pub mod train;

pub use config::{AttentionKind, DistillConfig, EncoderConfig, FinetuneConfig, Preset, PretrainConfig, PRESET_NAMES};
pub use mlm::{make_mlm_batch, pretrain_mlm, MlmBatch};
pub use model::EncoderModel;
pub use tokenizer::{Encoding, WordTokenizer};
pub use train::{distill, distill_terms, finetune_classifier, predict_all, TrainLog};

#[derive(Debug, thiserror::Error)]
pub enum TransformerError {
    #[error(transparent)]
    Nn(#[from] tweetsift_nnkit::NnError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("tokenizer: {0}")]
    Tokenizer(String),
    #[error("training data has a single class (label {0})")]
    SingleClass(u8),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TransformerError>;
