use serde::{Deserialize, Serialize};

use crate::{Result, TransformerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// Learned absolute positions added to the token embeddings.
    Absolute,
    /// Content and relative-position terms combined in the attention logits.
    Disentangled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub attention: AttentionKind,
    /// Largest relative distance with its own embedding (disentangled only).
    pub rel_window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            d_model: 64,
            d_ff: 256,
            max_len: 64,
            vocab_size: 8000,
            dropout: 0.1,
            attention: AttentionKind::Absolute,
            rel_window: 8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TransformerError::Config(m));
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size <= 4 || self.max_len == 0 || self.d_ff == 0 {
            return bad("vocab_size must exceed 4 and max_len, d_ff must be positive".into());
        }
        if self.attention == AttentionKind::Disentangled && self.rel_window == 0 {
            return bad("disentangled attention needs rel_window >= 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_rate: f64,
    pub clip_norm: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 1500, batch_size: 32, lr: 3e-4, mask_rate: 0.15, clip_norm: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 3, batch_size: 16, lr: 3e-4, clip_norm: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Weight of the hard-label loss; `1 - alpha` goes to the soft loss.
    pub alpha: f64,
    pub student_layers: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { temperature: 2.0, alpha: 0.5, student_layers: 2 }
    }
}

/// A named toy configuration standing in for one published model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub encoder: EncoderConfig,
    /// `None` trains from random initialization.
    pub pretrain: Option<PretrainConfig>,
    pub finetune: FinetuneConfig,
    pub distill: Option<DistillConfig>,
    /// Preset whose fine-tuned model is the distillation teacher.
    pub teacher: Option<String>,
}

pub const PRESET_NAMES: [&str; 4] = ["bert-toy", "roberta-toy", "distil-toy", "deberta-toy"];

impl Preset {
    pub fn named(name: &str) -> Option<Self> {
        let base = Preset {
            name: name.to_string(),
            encoder: EncoderConfig::default(),
            pretrain: Some(PretrainConfig::default()),
            finetune: FinetuneConfig::default(),
            distill: None,
            teacher: None,
        };
        Some(match name {
            "bert-toy" => base,
            "roberta-toy" => Preset { pretrain: Some(PretrainConfig { steps: 3000, ..Default::default() }), ..base },
            "distil-toy" => Preset {
                encoder: EncoderConfig { layers: 2, ..EncoderConfig::default() },
                pretrain: None,
                distill: Some(DistillConfig::default()),
                teacher: Some("bert-toy".into()),
                ..base
            },
            "deberta-toy" => Preset {
                encoder: EncoderConfig { attention: AttentionKind::Disentangled, rel_window: 8, ..EncoderConfig::default() },
                ..base
            },
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in PRESET_NAMES {
            let p = Preset::named(name).unwrap();
            p.encoder.validate().unwrap();
            assert_eq!(p.name, name);
        }
        assert!(Preset::named("gpt-toy").is_none());
        let distil = Preset::named("distil-toy").unwrap();
        assert_eq!(distil.encoder.layers * 2, Preset::named("bert-toy").unwrap().encoder.layers);
    }

    #[test]
    fn invalid_configs_rejected() {
        let c = EncoderConfig { heads: 3, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(EncoderConfig { layers: 0, ..Default::default() }.validate().is_err());
        assert!(EncoderConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
    }
}
