//! Tokenization, vocabulary construction and TF-IDF / raw-count sparse
//! vectors for the classical pipeline.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit TF-IDF on an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary is empty after filtering with min_df={min_df}")]
    EmptyVocabulary { min_df: usize },
    #[error("invalid sparse vector: {0}")]
    InvalidVector(String),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Whitespace tokens of a cleaned text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Splits on whitespace and drops single-character tokens that are not
/// numeric.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(
        text.split_whitespace()
            .filter(|t| t.len() >= 2 || t.bytes().all(|b| b.is_ascii_digit()))
            .map(str::to_owned)
            .collect(),
    )
}

/// Sparse row with strictly increasing indices and finite non-zero values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn new(entries: Vec<(u32, f64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(FeatureError::InvalidVector(format!(
                    "indices not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        if let Some(&(i, v)) = entries.iter().find(|(_, v)| !v.is_finite() || *v == 0.0) {
            return Err(FeatureError::InvalidVector(format!("entry {i} has value {v}")));
        }
        Ok(Self { entries })
    }

    /// Builds from a dense slice, keeping the non-zero components.
    pub fn from_dense(dense: &[f64]) -> Self {
        Self {
            entries: dense
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i as u32, *v))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Value at `index`, zero when absent.
    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i as usize]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }
}

/// Rows of sparse features with a fixed column count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<SparseVector>,
    pub dim: usize,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<SparseVector>, dim: usize) -> Self {
        debug_assert!(rows
            .iter()
            .all(|r| r.entries().last().is_none_or(|&(i, _)| (i as usize) < dim)));
        Self { rows, dim }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Token to column mapping plus document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index_of: HashMap<String, u32>,
    doc_freq: Vec<usize>,
    n_docs: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    doc_freq: Vec<usize>,
    n_docs: usize,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let index_of = r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens: r.tokens, index_of, doc_freq: r.doc_freq, n_docs: r.n_docs }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self { tokens: v.tokens, doc_freq: v.doc_freq, n_docs: v.n_docs }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<u32> {
        self.index_of.get(token).copied()
    }

    pub fn token(&self, index: u32) -> &str {
        &self.tokens[index as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn doc_freq(&self, index: u32) -> usize {
        self.doc_freq[index as usize]
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfIdfConfig {
    pub min_df: usize,
    pub max_features: usize,
    pub normalize: bool,
}

impl Default for TfIdfConfig {
    fn default() -> Self {
        Self { min_df: 2, max_features: 20_000, normalize: true }
    }
}

const ARTIFACT_FORMAT: &str = "tweetsift-tfidf";
const ARTIFACT_VERSION: u32 = 1;

/// Fitted vectorizer. Columns are ordered by descending document frequency,
/// ties lexicographic, so column `i` is the `i`-th most common token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    format: String,
    version: u32,
    pub config: TfIdfConfig,
    vocab: Vocabulary,
    idf: Vec<f64>,
}

/// Smoothed inverse document frequency.
pub fn smoothed_idf(n_docs: usize, doc_freq: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + doc_freq as f64)).ln() + 1.0
}

pub fn fit_tfidf(corpus: &[TokenSeq], config: TfIdfConfig) -> Result<TfIdfModel> {
    if corpus.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        let mut seen: Vec<&str> = doc.0.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = df
        .into_iter()
        .filter(|&(_, f)| f >= config.min_df)
        .collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.truncate(config.max_features);
    if kept.is_empty() {
        return Err(FeatureError::EmptyVocabulary { min_df: config.min_df });
    }

    let n_docs = corpus.len();
    let vocab = Vocabulary::from(VocabularyRepr {
        tokens: kept.iter().map(|(t, _)| t.to_string()).collect(),
        doc_freq: kept.iter().map(|&(_, f)| f).collect(),
        n_docs,
    });
    let idf = vocab.doc_freq.iter().map(|&f| smoothed_idf(n_docs, f)).collect();
    Ok(TfIdfModel {
        format: ARTIFACT_FORMAT.into(),
        version: ARTIFACT_VERSION,
        config,
        vocab,
        idf,
    })
}

impl TfIdfModel {
    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    fn counts(&self, doc: &TokenSeq) -> BTreeMap<u32, u32> {
        let mut counts = BTreeMap::new();
        for t in &doc.0 {
            if let Some(i) = self.vocab.index_of(t) {
                *counts.entry(i).or_insert(0u32) += 1;
            }
        }
        counts
    }

    /// Raw count times idf, optionally scaled to unit L2 norm.
    pub fn transform(&self, doc: &TokenSeq) -> SparseVector {
        let mut entries: Vec<(u32, f64)> = self
            .counts(doc)
            .into_iter()
            .map(|(i, c)| (i, f64::from(c) * self.idf[i as usize]))
            .collect();
        if self.config.normalize {
            let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                entries.iter_mut().for_each(|(_, v)| *v /= norm);
            }
        }
        SparseVector { entries }
    }

    /// Raw in-vocabulary term counts.
    pub fn count_vector(&self, doc: &TokenSeq) -> SparseVector {
        SparseVector {
            entries: self
                .counts(doc)
                .into_iter()
                .map(|(i, c)| (i, f64::from(c)))
                .collect(),
        }
    }

    pub fn transform_all(&self, docs: &[TokenSeq]) -> FeatureMatrix {
        FeatureMatrix::new(docs.iter().map(|d| self.transform(d)).collect(), self.dim())
    }

    pub fn count_all(&self, docs: &[TokenSeq]) -> FeatureMatrix {
        FeatureMatrix::new(docs.iter().map(|d| self.count_vector(d)).collect(), self.dim())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        if model.format != ARTIFACT_FORMAT || model.version != ARTIFACT_VERSION {
            return Err(FeatureError::Artifact(format!(
                "unsupported artifact {} v{}",
                model.format, model.version
            )));
        }
        if model.idf.len() != model.vocab.len() || model.vocab.doc_freq.len() != model.vocab.len() {
            return Err(FeatureError::Artifact("idf/vocabulary length mismatch".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
