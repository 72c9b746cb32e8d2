//! Multinomial naive Bayes with additive smoothing over count features.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tweetsift_core::features::{FeatureMatrix, SparseVector};

use crate::{check_training_set, ClassicalError, Classifier, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NaiveBayesConfig {
    pub alpha: f64,
}

impl Default for NaiveBayesConfig {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub alpha: f64,
    /// `ln P(class)` for classes 0 and 1.
    pub log_prior: [f64; 2],
    /// `ln P(feature | class)`, one row per class.
    pub feature_log_prob: [Vec<f64>; 2],
}

impl NaiveBayesModel {
    pub fn log_likelihood(&self, x: &SparseVector, class: usize) -> f64 {
        self.log_prior[class] + x.dot(&self.feature_log_prob[class])
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let [a, b] = &self.feature_log_prob;
        if a.len() != b.len() {
            return Err(ClassicalError::Artifact("class rows differ in length".into()));
        }
        if self.log_prior.iter().chain(a).chain(b).any(|v| !v.is_finite()) {
            return Err(ClassicalError::Artifact("non-finite log probability".into()));
        }
        Ok(())
    }

    pub fn describe(&self, names: Option<&[String]>) -> String {
        let [neg, pos] = &self.feature_log_prob;
        let ratio: Vec<f64> = pos.iter().zip(neg).map(|(p, n)| p - n).collect();
        let mut order: Vec<usize> = (0..ratio.len()).collect();
        order.sort_by(|&a, &b| ratio[b].total_cmp(&ratio[a]).then(a.cmp(&b)));
        let mut out = format!("naive bayes alpha={} log_prior={:?}\n", self.alpha, self.log_prior);
        for &i in order.iter().take(20) {
            let name = names.and_then(|n| n.get(i)).map_or_else(|| format!("f{i}"), Clone::clone);
            let _ = writeln!(out, "  {name}: {}", ratio[i]);
        }
        out
    }
}

impl Classifier for NaiveBayesModel {
    /// Log-odds of class 1.
    fn score(&self, x: &SparseVector) -> f64 {
        self.log_likelihood(x, 1) - self.log_likelihood(x, 0)
    }

    fn threshold(&self) -> f64 {
        0.0
    }
}

pub fn fit_naive_bayes(x: &FeatureMatrix, y: &[u8], config: &NaiveBayesConfig) -> Result<NaiveBayesModel> {
    check_training_set(x, y, true)?;
    let alpha = config.alpha;
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(ClassicalError::Config(format!("alpha must be positive, got {alpha}")));
    }
    let mut counts = [vec![0.0; x.dim], vec![0.0; x.dim]];
    let mut docs = [0usize; 2];
    for (row, &label) in x.rows.iter().zip(y) {
        let c = usize::from(label);
        docs[c] += 1;
        for &(j, v) in row.entries() {
            if v < 0.0 {
                return Err(ClassicalError::Config("naive Bayes needs non-negative features".into()));
            }
            counts[c][j as usize] += v;
        }
    }
    let n = x.len() as f64;
    let log_prior = docs.map(|d| (d as f64 / n).ln());
    let feature_log_prob = counts.map(|row| {
        let denom = (row.iter().sum::<f64>() + alpha * x.dim as f64).ln();
        row.iter().map(|c| (c + alpha).ln() - denom).collect()
    });
    Ok(NaiveBayesModel { alpha, log_prior, feature_log_prob })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::matrix;

    #[test]
    fn four_document_hand_computation() {
        // Counts: class 1 docs [2,1,0] and [1,0,0]; class 0 docs [0,1,1] and [0,0,2].
        let x = matrix(&[vec![2.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0]]);
        let y = [1, 0, 1, 0];
        let m = fit_naive_bayes(&x, &y, &NaiveBayesConfig::default()).unwrap();
        // Class 1 totals [3,1,0] + 1 over 4 + 3; class 0 totals [0,1,3] + 1 over 4 + 3.
        let p1 = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        let p0 = [1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0];
        for j in 0..3 {
            assert!((m.feature_log_prob[1][j] - f64::ln(p1[j])).abs() < 1e-12);
            assert!((m.feature_log_prob[0][j] - f64::ln(p0[j])).abs() < 1e-12);
        }
        let q = SparseVector::from_dense(&[1.0, 1.0, 0.0]);
        let expected = f64::ln(4.0 * 2.0) - f64::ln(1.0 * 2.0);
        assert!((m.score(&q) - expected).abs() < 1e-12);
        assert_eq!(m.predict(&q), 1);
    }

    #[test]
    fn rejects_bad_alpha_and_single_class() {
        let x = matrix(&[vec![1.0], vec![2.0]]);
        for alpha in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                fit_naive_bayes(&x, &[0, 1], &NaiveBayesConfig { alpha }),
                Err(ClassicalError::Config(_))
            ));
        }
        assert!(matches!(
            fit_naive_bayes(&x, &[1, 1], &NaiveBayesConfig::default()),
            Err(ClassicalError::SingleClass)
        ));
    }

    #[test]
    fn empty_row_scores_prior_log_odds() {
        let x = matrix(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 3.0]]);
        let m = fit_naive_bayes(&x, &[1, 0, 0], &NaiveBayesConfig::default()).unwrap();
        assert!((m.score(&SparseVector::default()) - f64::ln(0.5)).abs() < 1e-12);
    }
}
