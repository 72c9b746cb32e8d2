//! Boosted trees on the logistic loss.
//!
//! Gradient boosting fits each stage to the residuals `y - p` by squared
//! error and sets every leaf with one Newton step `sum r / sum p(1-p)`. The
//! second-order variant grows its trees directly on gradients `p - y` and
//! hessians `p(1-p)` with L2 leaf shrinkage and a split penalty.

use serde::{Deserialize, Serialize};
use tweetsift_core::features::FeatureMatrix;

use crate::tree::{Aggregation, GrowParams, Grower, Tree, TreeEnsemble};
use crate::{check_training_set, log_loss, sigmoid, ClassicalError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingConfig {
    pub n_stages: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        Self { n_stages: 200, max_depth: 3, learning_rate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XgbConfig {
    pub n_stages: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Smallest hessian sum allowed in a child.
    pub min_child_weight: f64,
}

impl Default for XgbConfig {
    fn default() -> Self {
        Self { n_stages: 200, max_depth: 4, learning_rate: 0.1, lambda: 1.0, gamma: 0.0, min_child_weight: 1.0 }
    }
}

/// Log-odds of the positive rate, clamped away from 0 and 1.
pub fn prior_margin(y: &[u8]) -> f64 {
    let p = (y.iter().filter(|&&l| l == 1).count() as f64 / y.len() as f64).clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Newton leaf for residual trees: `eta * sum r / sum p(1-p)`.
pub fn residual_leaf(residual_sum: f64, hessian_sum: f64, eta: f64) -> f64 {
    if hessian_sum < 1e-12 {
        0.0
    } else {
        eta * residual_sum / hessian_sum
    }
}

/// Regularized Newton leaf: `-eta * G / (H + lambda)`.
pub fn second_order_leaf(grad_sum: f64, hessian_sum: f64, lambda: f64, eta: f64) -> f64 {
    let d = hessian_sum + lambda;
    if d < 1e-12 {
        0.0
    } else {
        -eta * grad_sum / d
    }
}

fn check_rate(eta: f64) -> Result<()> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(ClassicalError::Config(format!("learning_rate must be positive, got {eta}")));
    }
    Ok(())
}

fn boost(
    x: &FeatureMatrix,
    y: &[u8],
    n_stages: usize,
    mut stage: impl FnMut(&[f64], &[f64]) -> Tree,
) -> TreeEnsemble {
    let base = prior_margin(y);
    let mut margin = vec![base; y.len()];
    let mut p = vec![0.0; y.len()];
    let mut trees = Vec::with_capacity(n_stages);
    let mut trace = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        p.iter_mut().zip(&margin).for_each(|(p, &m)| *p = sigmoid(m));
        let tree = stage(&margin, &p);
        for (m, row) in margin.iter_mut().zip(&x.rows) {
            *m += tree.predict(row);
        }
        trees.push(tree);
        trace.push(log_loss(&margin, y));
    }
    TreeEnsemble { aggregation: Aggregation::Additive, base_margin: base, trees, loss_trace: trace }
}

pub fn fit_gradient_boosting(x: &FeatureMatrix, y: &[u8], config: &BoostingConfig) -> Result<TreeEnsemble> {
    check_training_set(x, y, false)?;
    check_rate(config.learning_rate)?;
    let eta = config.learning_rate;
    let params = GrowParams { max_depth: config.max_depth, lambda: 0.0, gamma: 0.0, min_child_weight: 0.0 };
    let ones = vec![1.0; y.len()];
    let all: Vec<u32> = (0..y.len() as u32).collect();
    Ok(boost(x, y, config.n_stages, |_, p| {
        let r: Vec<f64> = p.iter().zip(y).map(|(p, &l)| f64::from(l) - p).collect();
        let leaf = |s: &[u32]| {
            let rs: f64 = s.iter().map(|&i| r[i as usize]).sum();
            let hs: f64 = s.iter().map(|&i| p[i as usize] * (1.0 - p[i as usize])).sum();
            residual_leaf(rs, hs, eta)
        };
        Grower::new(x, &r, &ones, params).grow(all.clone(), &mut || None, &leaf)
    }))
}

pub fn fit_xgboost_like(x: &FeatureMatrix, y: &[u8], config: &XgbConfig) -> Result<TreeEnsemble> {
    check_training_set(x, y, false)?;
    check_rate(config.learning_rate)?;
    if !(config.lambda >= 0.0) {
        return Err(ClassicalError::Config(format!("lambda must be non-negative, got {}", config.lambda)));
    }
    if !(config.gamma >= 0.0) || !(config.min_child_weight >= 0.0) {
        return Err(ClassicalError::Config("gamma and min_child_weight must be non-negative".into()));
    }
    let params = GrowParams {
        max_depth: config.max_depth,
        lambda: config.lambda,
        gamma: config.gamma,
        min_child_weight: config.min_child_weight,
    };
    let all: Vec<u32> = (0..y.len() as u32).collect();
    Ok(boost(x, y, config.n_stages, |_, p| {
        let g: Vec<f64> = p.iter().zip(y).map(|(p, &l)| p - f64::from(l)).collect();
        let h: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let leaf = |s: &[u32]| {
            let gs: f64 = s.iter().map(|&i| g[i as usize]).sum();
            let hs: f64 = s.iter().map(|&i| h[i as usize]).sum();
            second_order_leaf(gs, hs, config.lambda, config.learning_rate)
        };
        Grower::new(x, &g, &h, params).grow(all.clone(), &mut || None, &leaf)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{blobs, matrix};
    use crate::tree::Node;
    use crate::Classifier;

    #[test]
    fn loss_traces_decrease() {
        let (x, y) = blobs(80, 4, 13);
        let gb = fit_gradient_boosting(&x, &y, &BoostingConfig { n_stages: 40, ..Default::default() }).unwrap();
        let xgb = fit_xgboost_like(&x, &y, &XgbConfig { n_stages: 40, ..Default::default() }).unwrap();
        for m in [&gb, &xgb] {
            assert_eq!(m.loss_trace.len(), 40);
            assert!(m.loss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", m.loss_trace);
            assert!(m.loss_trace[0] < log_loss(&vec![m.base_margin; y.len()], &y));
        }
    }

    #[test]
    fn all_positive_labels_score_high() {
        let x = matrix(&[vec![1.0], vec![2.0], vec![3.0]]);
        let y = [1, 1, 1];
        let gb = fit_gradient_boosting(&x, &y, &BoostingConfig::default()).unwrap();
        let xgb = fit_xgboost_like(&x, &y, &XgbConfig::default()).unwrap();
        for r in &x.rows {
            assert!(gb.score(r) >= 0.99);
            assert!(xgb.score(r) >= 0.99);
        }
    }

    #[test]
    fn huge_lambda_gives_constant_score() {
        let (x, y) = blobs(50, 3, 1);
        let cfg = XgbConfig { n_stages: 10, lambda: 1e30, ..Default::default() };
        let m = fit_xgboost_like(&x, &y, &cfg).unwrap();
        let first = m.score(&x.rows[0]);
        assert!(x.rows.iter().all(|r| (m.score(r) - first).abs() < 1e-12));
        assert!(matches!(
            fit_xgboost_like(&x, &y, &XgbConfig { lambda: -1.0, ..Default::default() }),
            Err(ClassicalError::Config(_))
        ));
    }

    /// Replays each residual-tree stage and recomputes its leaves with the
    /// second-order formula at `lambda = 0` on the same partition and margins.
    #[test]
    fn residual_and_second_order_leaves_agree_without_shrinkage() {
        let (x, y) = blobs(60, 3, 31);
        let eta = 0.1;
        let gb = fit_gradient_boosting(&x, &y, &BoostingConfig { n_stages: 15, max_depth: 3, learning_rate: eta })
            .unwrap();
        let mut margin = vec![gb.base_margin; y.len()];
        for tree in &gb.trees {
            let p: Vec<f64> = margin.iter().map(|&m| sigmoid(m)).collect();
            let mut per_leaf: std::collections::BTreeMap<usize, (f64, f64)> = Default::default();
            for (i, row) in x.rows.iter().enumerate() {
                let e = per_leaf.entry(tree.leaf_index(row)).or_default();
                e.0 += p[i] - f64::from(y[i]);
                e.1 += p[i] * (1.0 - p[i]);
            }
            for (leaf, (gs, hs)) in per_leaf {
                let Node::Leaf { value } = tree.nodes[leaf] else { panic!("not a leaf") };
                assert!((value - second_order_leaf(gs, hs, 0.0, eta)).abs() < 1e-9);
            }
            for (m, row) in margin.iter_mut().zip(&x.rows) {
                *m += tree.predict(row);
            }
        }
    }

    #[test]
    fn constant_features_give_stumps() {
        let x = matrix(&[vec![1.0], vec![1.0], vec![1.0], vec![1.0]]);
        let m = fit_gradient_boosting(&x, &[0, 1, 0, 1], &BoostingConfig { n_stages: 3, ..Default::default() }).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(m.score(&x.rows[0]), 0.5);
    }
}
