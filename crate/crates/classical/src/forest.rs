//! Random forest: bootstrap samples, `sqrt(d)` candidate features per node,
//! Gini splits and hard majority votes.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tweetsift_core::features::FeatureMatrix;
use tweetsift_core::seed;

use crate::tree::{Aggregation, GrowParams, Grower, TreeEnsemble};
use crate::{check_training_set, ClassicalError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Candidate features per node; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: 12, max_features: None, bootstrap: true }
    }
}

pub fn fit_random_forest(x: &FeatureMatrix, y: &[u8], config: &ForestConfig, seed: u64) -> Result<TreeEnsemble> {
    check_training_set(x, y, true)?;
    if config.n_trees == 0 {
        return Err(ClassicalError::Config("n_trees must be positive".into()));
    }
    if x.dim == 0 {
        return Err(ClassicalError::NoVariation);
    }
    let k = config
        .max_features
        .unwrap_or_else(|| ((x.dim as f64).sqrt().floor() as usize).max(1))
        .clamp(1, x.dim);
    let g: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
    let h = vec![1.0; y.len()];
    let params = GrowParams { max_depth: config.max_depth, lambda: 0.0, gamma: 0.0, min_child_weight: 0.0 };
    let mut grower = Grower::new(x, &g, &h, params);
    let majority = |s: &[u32]| {
        let pos = s.iter().filter(|&&i| y[i as usize] == 1).count();
        if 2 * pos >= s.len() {
            1.0
        } else {
            0.0
        }
    };
    let n = y.len();
    let mut trees = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        let mut rng = seed::stream(seed, &format!("forest/tree{t}"));
        let samples: Vec<u32> = if config.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n as u32)).collect()
        } else {
            (0..n as u32).collect()
        };
        let mut features = || {
            let mut f: Vec<u32> = index::sample(&mut rng, x.dim, k).into_iter().map(|i| i as u32).collect();
            f.sort_unstable();
            Some(f)
        };
        trees.push(grower.grow(samples, &mut features, &majority));
    }
    Ok(TreeEnsemble { aggregation: Aggregation::Vote, base_margin: 0.0, trees, loss_trace: Vec::new() })
}
