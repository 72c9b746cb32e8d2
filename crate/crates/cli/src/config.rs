//! Run configuration: one TOML file, with command-line overrides for the
//! seed and output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tweetsift_classical::{ClassicalConfig, ModelKind};
use tweetsift_core::features::TfIdfConfig;
use tweetsift_transformer::{Preset, PRESET_NAMES};

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    /// Fraction of each class that goes to the training side.
    pub split_ratio: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { path: PathBuf::from("data/train.csv"), split_ratio: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub min_df: usize,
    pub max_features: usize,
    /// Column budget for the random forest and both boosting models.
    pub tree_max_features: usize,
    pub normalize: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self { min_df: 2, max_features: 20_000, tree_max_features: 2_000, normalize: true }
    }
}

impl FeatureSection {
    pub fn tfidf(&self, kind: ModelKind) -> TfIdfConfig {
        let max_features = if kind.uses_tree_features() { self.tree_max_features } else { self.max_features };
        TfIdfConfig { min_df: self.min_df, max_features, normalize: self.normalize }
    }
}

/// Optional replacements for individual preset settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetPatch {
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub d_model: Option<usize>,
    pub d_ff: Option<usize>,
    pub max_len: Option<usize>,
    pub vocab_size: Option<usize>,
    pub dropout: Option<f64>,
    pub rel_window: Option<usize>,
    pub pretrain_steps: Option<usize>,
    pub pretrain_batch_size: Option<usize>,
    pub mask_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub temperature: Option<f64>,
    pub alpha: Option<f64>,
}

impl PresetPatch {
    pub fn apply(&self, mut p: Preset) -> Preset {
        let e = &mut p.encoder;
        e.layers = self.layers.unwrap_or(e.layers);
        e.heads = self.heads.unwrap_or(e.heads);
        e.d_model = self.d_model.unwrap_or(e.d_model);
        e.d_ff = self.d_ff.unwrap_or(e.d_ff);
        e.max_len = self.max_len.unwrap_or(e.max_len);
        e.vocab_size = self.vocab_size.unwrap_or(e.vocab_size);
        e.dropout = self.dropout.unwrap_or(e.dropout);
        e.rel_window = self.rel_window.unwrap_or(e.rel_window);
        if let Some(pre) = p.pretrain.as_mut() {
            pre.steps = self.pretrain_steps.unwrap_or(pre.steps);
            pre.batch_size = self.pretrain_batch_size.unwrap_or(pre.batch_size);
            pre.mask_rate = self.mask_rate.unwrap_or(pre.mask_rate);
        }
        p.finetune.epochs = self.epochs.unwrap_or(p.finetune.epochs);
        p.finetune.batch_size = self.batch_size.unwrap_or(p.finetune.batch_size);
        p.finetune.lr = self.lr.unwrap_or(p.finetune.lr);
        if let Some(d) = p.distill.as_mut() {
            d.temperature = self.temperature.unwrap_or(d.temperature);
            d.alpha = self.alpha.unwrap_or(d.alpha);
            d.student_layers = p.encoder.layers;
        }
        p
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerSection {
    /// Keyed by preset name.
    pub overrides: BTreeMap<String, PresetPatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub models: Vec<String>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { models: ModelKind::ALL.iter().map(|k| k.name().to_string()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream. Required; there is no clock fallback.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub data: DataSection,
    pub features: FeatureSection,
    pub classical: ClassicalConfig,
    pub transformer: TransformerSection,
    pub compare: CompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("runs/default"),
            data: DataSection::default(),
            features: FeatureSection::default(),
            classical: ClassicalConfig::default(),
            transformer: TransformerSection::default(),
            compare: CompareSection::default(),
        }
    }
}

/// Every name accepted by `train`, `evaluate` and `compare`.
pub fn model_names() -> Vec<&'static str> {
    ModelKind::ALL.iter().map(|k| k.name()).chain(PRESET_NAMES).collect()
}

/// A parsed model name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelName {
    Classical(ModelKind),
    Transformer(&'static str),
}

impl ModelName {
    pub fn parse(name: &str) -> Result<Self> {
        if let Some(k) = ModelKind::parse(name) {
            return Ok(Self::Classical(k));
        }
        PRESET_NAMES
            .iter()
            .find(|&&p| p == name)
            .map(|&p| Self::Transformer(p))
            .ok_or_else(|| CliError::UnknownModel { name: name.to_string(), valid: model_names().join(", ") })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Classical(k) => k.name(),
            Self::Transformer(p) => p,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| CliError::Config("a seed is required (config `seed = N` or --seed N)".into()))
    }

    /// Checks everything that does not depend on which command runs.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        let ratio = self.data.split_ratio;
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(CliError::Config(format!("split_ratio {ratio} must lie strictly between 0 and 1")));
        }
        if self.features.min_df == 0 || self.features.max_features == 0 || self.features.tree_max_features == 0 {
            return Err(CliError::Config("min_df, max_features and tree_max_features must be positive".into()));
        }
        for name in &self.compare.models {
            ModelName::parse(name)?;
        }
        for (name, patch) in &self.transformer.overrides {
            if !PRESET_NAMES.contains(&name.as_str()) {
                return Err(CliError::UnknownModel { name: name.clone(), valid: PRESET_NAMES.join(", ") });
            }
            let p = patch.apply(Preset::named(name).expect("listed preset"));
            p.encoder.validate().map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Checks that the dataset file exists.
    pub fn validate_data_path(&self) -> Result<()> {
        if self.data.path.is_file() {
            Ok(())
        } else {
            Err(CliError::MissingInput(self.data.path.clone()))
        }
    }

    pub fn preset(&self, name: &str) -> Result<Preset> {
        let base = Preset::named(name)
            .ok_or_else(|| CliError::UnknownModel { name: name.to_string(), valid: PRESET_NAMES.join(", ") })?;
        Ok(match self.transformer.overrides.get(name) {
            Some(patch) => patch.apply(base),
            None => base,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_needs_a_seed() {
        let c = RunConfig::from_toml("").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_toml("seed = 7").unwrap();
        c.validate().unwrap();
        assert_eq!(c.features.tree_max_features, 2000);
        assert_eq!(c.classical.rf.n_trees, 200);
    }

    #[test]
    fn ratio_one_is_rejected() {
        let c = RunConfig::from_toml("seed = 1\n[data]\nsplit_ratio = 1.0\n").unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_keys_and_models_are_rejected() {
        assert!(RunConfig::from_toml("seed = 1\nsed = 2\n").is_err());
        let c = RunConfig::from_toml("seed = 1\n[compare]\nmodels = [\"lr\", \"gpt\"]\n").unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("gpt") && err.contains("xgb") && err.contains("deberta-toy"), "{err}");
    }

    #[test]
    fn overrides_patch_presets() {
        let c = RunConfig::from_toml(
            "seed = 1\n[transformer.overrides.distil-toy]\nlayers = 1\nepochs = 1\n[classical.rf]\nn_trees = 5\n",
        )
        .unwrap();
        c.validate().unwrap();
        let p = c.preset("distil-toy").unwrap();
        assert_eq!((p.encoder.layers, p.finetune.epochs, p.distill.unwrap().student_layers), (1, 1, 1));
        assert_eq!(c.preset("bert-toy").unwrap(), Preset::named("bert-toy").unwrap());
        assert_eq!(c.classical.rf.n_trees, 5);
    }
}
