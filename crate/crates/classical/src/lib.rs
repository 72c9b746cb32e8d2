//! Six binary classifiers over sparse feature rows, all behind the
//! [`Classifier`] contract: `predict(x)` is exactly `score(x) >= threshold`.
//!
//! | model | score | threshold |
//! |---|---|---|
//! | logistic regression | sigmoid probability | 0.5 |
//! | linear SVM | margin `w.x + b` | 0 |
//! | multinomial naive Bayes | log-odds of class 1 | 0 |
//! | random forest | fraction of positive votes | 0.5 |
//! | gradient boosting | sigmoid probability | 0.5 |
//! | second-order boosting | sigmoid probability | 0.5 |

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tweetsift_core::features::{FeatureMatrix, SparseVector};

pub mod boosting;
pub mod forest;
pub mod linear;
pub mod naive_bayes;
pub mod tree;

pub use boosting::{fit_gradient_boosting, fit_xgboost_like, BoostingConfig, XgbConfig};
pub use forest::{fit_random_forest, ForestConfig};
pub use linear::{fit_linear_svm, fit_logistic, LinearModel, LogisticConfig, SvmConfig};
pub use naive_bayes::{fit_naive_bayes, NaiveBayesConfig, NaiveBayesModel};
pub use tree::{Tree, TreeEnsemble};

#[derive(Debug, Error)]
pub enum ClassicalError {
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("empty training set")]
    Empty,
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("label {0} is not binary")]
    NotBinary(u8),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no feature takes more than one value")]
    NoVariation,
    #[error("artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ClassicalError>;

/// Uniform scoring surface shared by every fitted model.
pub trait Classifier {
    /// Monotone in positive-class confidence; deterministic after fit.
    fn score(&self, x: &SparseVector) -> f64;

    fn threshold(&self) -> f64;

    fn predict(&self, x: &SparseVector) -> u8 {
        u8::from(self.score(x) >= self.threshold())
    }

    fn score_all(&self, x: &FeatureMatrix) -> Vec<f64> {
        x.rows.iter().map(|r| self.score(r)).collect()
    }
}

pub(crate) fn check_training_set(x: &FeatureMatrix, y: &[u8], need_both: bool) -> Result<()> {
    if x.len() != y.len() {
        return Err(ClassicalError::LengthMismatch { rows: x.len(), labels: y.len() });
    }
    if y.is_empty() {
        return Err(ClassicalError::Empty);
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(ClassicalError::NotBinary(bad));
    }
    if need_both && (!y.contains(&0) || !y.contains(&1)) {
        return Err(ClassicalError::SingleClass);
    }
    Ok(())
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss of margins `z` against labels `y`.
pub fn log_loss(z: &[f64], y: &[u8]) -> f64 {
    let total: f64 = z
        .iter()
        .zip(y)
        .map(|(&z, &y)| if y == 1 { softplus(-z) } else { softplus(z) })
        .sum();
    total / z.len() as f64
}

/// The six model families, by their command-line names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Svm,
    Nb,
    Rf,
    Gb,
    Xgb,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [Self::Lr, Self::Svm, Self::Rf, Self::Gb, Self::Nb, Self::Xgb];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lr => "lr",
            Self::Svm => "svm",
            Self::Nb => "nb",
            Self::Rf => "rf",
            Self::Gb => "gb",
            Self::Xgb => "xgb",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Tree models train on the reduced top-by-document-frequency features.
    pub fn uses_tree_features(self) -> bool {
        matches!(self, Self::Rf | Self::Gb | Self::Xgb)
    }
}

/// Every fitted classical model, tagged by type for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", content = "model", rename_all = "snake_case")]
pub enum ClassicalModel {
    Logistic(LinearModel),
    LinearSvm(LinearModel),
    NaiveBayes(NaiveBayesModel),
    RandomForest(TreeEnsemble),
    GradientBoosting(TreeEnsemble),
    XgboostLike(TreeEnsemble),
}

impl ClassicalModel {
    fn inner(&self) -> &dyn Classifier {
        match self {
            Self::Logistic(m) | Self::LinearSvm(m) => m,
            Self::NaiveBayes(m) => m,
            Self::RandomForest(m) | Self::GradientBoosting(m) | Self::XgboostLike(m) => m,
        }
    }

    /// Per-epoch or per-stage training objective, where the model keeps one.
    pub fn loss_trace(&self) -> &[f64] {
        match self {
            Self::Logistic(m) | Self::LinearSvm(m) => &m.loss_trace,
            Self::NaiveBayes(_) => &[],
            Self::RandomForest(m) | Self::GradientBoosting(m) | Self::XgboostLike(m) => &m.loss_trace,
        }
    }

    /// Indented text rendering for audit.
    pub fn describe(&self, feature_names: Option<&[String]>) -> String {
        match self {
            Self::Logistic(m) | Self::LinearSvm(m) => m.describe(feature_names),
            Self::NaiveBayes(m) => m.describe(feature_names),
            Self::RandomForest(m) | Self::GradientBoosting(m) | Self::XgboostLike(m) => {
                m.describe(feature_names)
            }
        }
    }
}

impl Classifier for ClassicalModel {
    fn score(&self, x: &SparseVector) -> f64 {
        self.inner().score(x)
    }

    fn threshold(&self) -> f64 {
        self.inner().threshold()
    }
}

/// Frozen default hyperparameters for all six models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicalConfig {
    pub lr: LogisticConfig,
    pub svm: SvmConfig,
    pub nb: NaiveBayesConfig,
    pub rf: ForestConfig,
    pub gb: BoostingConfig,
    pub xgb: XgbConfig,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            lr: LogisticConfig::default(),
            svm: SvmConfig::default(),
            nb: NaiveBayesConfig::default(),
            rf: ForestConfig::default(),
            gb: BoostingConfig::default(),
            xgb: XgbConfig::default(),
        }
    }
}

impl ClassicalConfig {
    /// Echo of the block used by `kind`.
    pub fn echo(&self, kind: ModelKind) -> serde_json::Value {
        let v = match kind {
            ModelKind::Lr => serde_json::to_value(&self.lr),
            ModelKind::Svm => serde_json::to_value(&self.svm),
            ModelKind::Nb => serde_json::to_value(&self.nb),
            ModelKind::Rf => serde_json::to_value(&self.rf),
            ModelKind::Gb => serde_json::to_value(&self.gb),
            ModelKind::Xgb => serde_json::to_value(&self.xgb),
        };
        v.unwrap_or(serde_json::Value::Null)
    }
}

/// Fits `kind` with its block of `config`. `seed` feeds the stochastic fits
/// (SVM visiting order, forest bootstrap and feature sampling).
pub fn fit(kind: ModelKind, x: &FeatureMatrix, y: &[u8], config: &ClassicalConfig, seed: u64) -> Result<ClassicalModel> {
    Ok(match kind {
        ModelKind::Lr => ClassicalModel::Logistic(fit_logistic(x, y, &config.lr)?),
        ModelKind::Svm => ClassicalModel::LinearSvm(fit_linear_svm(x, y, &config.svm, seed)?),
        ModelKind::Nb => ClassicalModel::NaiveBayes(fit_naive_bayes(x, y, &config.nb)?),
        ModelKind::Rf => ClassicalModel::RandomForest(fit_random_forest(x, y, &config.rf, seed)?),
        ModelKind::Gb => ClassicalModel::GradientBoosting(fit_gradient_boosting(x, y, &config.gb)?),
        ModelKind::Xgb => ClassicalModel::XgboostLike(fit_xgboost_like(x, y, &config.xgb)?),
    })
}

const ARTIFACT_FORMAT: &str = "tweetsift-classical";

/// Serialized model with its type tag and the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub name: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub model: ClassicalModel,
}

impl ModelArtifact {
    pub fn new(name: &str, config: serde_json::Value, seed: u64, model: ClassicalModel) -> Self {
        Self { format: ARTIFACT_FORMAT.into(), name: name.into(), config, seed, model }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(s)?;
        if a.format != ARTIFACT_FORMAT {
            return Err(ClassicalError::Artifact(format!("unexpected format `{}`", a.format)));
        }
        match &a.model {
            ClassicalModel::RandomForest(m) | ClassicalModel::GradientBoosting(m) | ClassicalModel::XgboostLike(m) => {
                m.validate()?
            }
            ClassicalModel::Logistic(m) | ClassicalModel::LinearSvm(m) => m.validate()?,
            ClassicalModel::NaiveBayes(m) => m.validate()?,
        }
        Ok(a)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use tweetsift_core::features::{FeatureMatrix, SparseVector};

    /// Dense rows to a feature matrix.
    pub fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        let dim = rows.first().map_or(0, Vec::len);
        FeatureMatrix::new(rows.iter().map(|r| SparseVector::from_dense(r)).collect(), dim)
    }

    /// Deterministic two-blob data in `dim` dimensions with some overlap.
    pub fn blobs(n: usize, dim: usize, seed: u64) -> (FeatureMatrix, Vec<u8>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u8;
            let shift = if label == 1 { 0.6 } else { -0.6 };
            let row: Vec<f64> = (0..dim)
                .map(|d| {
                    let centre = if d == 0 { shift } else { shift * 0.5 };
                    centre + rng.gen_range(-1.0..1.0)
                })
                .collect();
            rows.push(row);
            y.push(label);
        }
        (matrix(&rows), y)
    }
}
