//! Linear models: L2-regularized logistic regression trained by full-batch
//! gradient descent, and a linear SVM trained with Pegasos subgradient steps.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tweetsift_core::features::{FeatureMatrix, SparseVector};

use crate::{check_training_set, sigmoid, softplus, ClassicalError, Classifier, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub lr: f64,
    pub l2: f64,
    pub epochs: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { lr: 0.1, l2: 1e-4, epochs: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub l2: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { l2: 1e-4, epochs: 300 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    /// Probability `sigmoid(w.x + b)`, threshold 0.5.
    Sigmoid,
    /// Raw margin `w.x + b`, threshold 0.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub link: Link,
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Regularized training objective, first entry at initialization.
    pub loss_trace: Vec<f64>,
}

impl LinearModel {
    pub fn margin(&self, x: &SparseVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.weights.iter().chain([&self.bias]).any(|w| !w.is_finite()) {
            return Err(ClassicalError::Artifact("non-finite linear weights".into()));
        }
        Ok(())
    }

    pub fn describe(&self, names: Option<&[String]>) -> String {
        let mut order: Vec<usize> = (0..self.weights.len()).collect();
        order.sort_by(|&a, &b| self.weights[b].abs().total_cmp(&self.weights[a].abs()).then(a.cmp(&b)));
        let mut out = format!("linear ({:?}) bias={}\n", self.link, self.bias);
        for &i in order.iter().take(20) {
            let name = names.and_then(|n| n.get(i)).map_or_else(|| format!("f{i}"), Clone::clone);
            let _ = writeln!(out, "  {name}: {}", self.weights[i]);
        }
        out
    }
}

impl Classifier for LinearModel {
    fn score(&self, x: &SparseVector) -> f64 {
        let z = self.margin(x);
        match self.link {
            // Kept strictly inside (0, 1) even where the sigmoid saturates.
            Link::Sigmoid => sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0),
            Link::Identity => z,
        }
    }

    fn threshold(&self) -> f64 {
        match self.link {
            Link::Sigmoid => 0.5,
            Link::Identity => 0.0,
        }
    }
}

fn check_hyper(name: &str, value: f64, allow_zero: bool) -> Result<()> {
    if !value.is_finite() || value < 0.0 || (!allow_zero && value == 0.0) {
        return Err(ClassicalError::Config(format!("{name} must be {} finite, got {value}", if allow_zero { "a non-negative" } else { "a positive" })));
    }
    Ok(())
}

fn l2_penalty(w: &[f64], l2: f64) -> f64 {
    0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Full-batch gradient descent on `mean log-loss + l2/2 |w|^2`; the bias is
/// not regularized.
pub fn fit_logistic(x: &FeatureMatrix, y: &[u8], config: &LogisticConfig) -> Result<LinearModel> {
    check_training_set(x, y, true)?;
    check_hyper("lr", config.lr, false)?;
    check_hyper("l2", config.l2, true)?;
    let n = x.len() as f64;
    let mut w = vec![0.0; x.dim];
    let mut b = 0.0;
    let mut trace = Vec::with_capacity(config.epochs + 1);
    let mut grad = vec![0.0; x.dim];
    for epoch in 0..=config.epochs {
        grad.fill(0.0);
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (row, &label) in x.rows.iter().zip(y) {
            let z = row.dot(&w) + b;
            loss += if label == 1 { softplus(-z) } else { softplus(z) };
            let r = sigmoid(z) - f64::from(label);
            grad_b += r;
            for &(j, v) in row.entries() {
                grad[j as usize] += r * v;
            }
        }
        trace.push(loss / n + l2_penalty(&w, config.l2));
        if epoch == config.epochs {
            break;
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= config.lr * (gj / n + config.l2 * *wj);
        }
        b -= config.lr * grad_b / n;
    }
    Ok(LinearModel {
        weights: w,
        bias: b,
        link: Link::Sigmoid,
        l2: config.l2,
        lr: config.lr,
        epochs: config.epochs,
        loss_trace: trace,
    })
}

/// `l2/2 (|w|^2 + b^2) + mean hinge`; the SVM bias is an augmented constant
/// feature and is regularized with the weights.
pub fn svm_objective(x: &FeatureMatrix, y: &[u8], w: &[f64], b: f64, l2: f64) -> f64 {
    let hinge: f64 = x
        .rows
        .iter()
        .zip(y)
        .map(|(row, &label)| {
            let s = if label == 1 { 1.0 } else { -1.0 };
            (1.0 - s * (row.dot(w) + b)).max(0.0)
        })
        .sum();
    hinge / x.len() as f64 + l2_penalty(w, l2) + 0.5 * l2 * b * b
}

/// Pegasos: step `1/(l2 t)`, projection onto the ball of radius
/// `1/sqrt(l2)`, one pass per epoch in a seeded shuffled order. The weight
/// vector is held as `scale * v` so the shrink step is O(1).
pub fn fit_linear_svm(x: &FeatureMatrix, y: &[u8], config: &SvmConfig, seed: u64) -> Result<LinearModel> {
    check_training_set(x, y, true)?;
    check_hyper("l2", config.l2, false)?;
    let lambda = config.l2;
    let radius = 1.0 / lambda.sqrt();
    let bias_ix = x.dim;
    let mut v = vec![0.0; x.dim + 1];
    let mut scale = 1.0;
    let mut sq = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let signs: Vec<f64> = y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();

    let current = |v: &[f64], scale: f64| -> (Vec<f64>, f64) {
        (v[..bias_ix].iter().map(|c| c * scale).collect(), v[bias_ix] * scale)
    };
    let mut trace = Vec::with_capacity(config.epochs + 1);
    trace.push(svm_objective(x, y, &vec![0.0; x.dim], 0.0, lambda));

    let mut t: u64 = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let row = &x.rows[i];
            let margin = signs[i] * scale * (row.dot(&v[..bias_ix]) + v[bias_ix]);
            scale *= 1.0 - eta * lambda;
            if scale == 0.0 {
                v.fill(0.0);
                scale = 1.0;
                sq = 0.0;
            }
            if margin < 1.0 {
                let c = eta * signs[i] / scale;
                for &(j, xj) in row.entries().iter().chain([&(bias_ix as u32, 1.0)]) {
                    let old = v[j as usize];
                    let new = old + c * xj;
                    v[j as usize] = new;
                    sq += new * new - old * old;
                }
            }
            let norm = scale * sq.max(0.0).sqrt();
            if norm > radius {
                scale *= radius / norm;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|c| *c *= scale);
                sq = v.iter().map(|c| c * c).sum();
                scale = 1.0;
            }
        }
        let (w, b) = current(&v, scale);
        trace.push(svm_objective(x, y, &w, b, lambda));
    }
    let (weights, bias) = current(&v, scale);
    Ok(LinearModel {
        weights,
        bias,
        link: Link::Identity,
        l2: lambda,
        lr: 0.0,
        epochs: config.epochs,
        loss_trace: trace,
    })
}
