//! Binary decision trees over sparse rows and the split search they share.
//!
//! Every tree model grows trees from per-sample first and second order
//! statistics `(g, h)` and scores a split by
//! `1/2 [G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)] - gamma`.
//! With `g = label`, `h = 1` and `l = 0` this is a quarter of the weighted
//! Gini decrease; with `g = residual`, `h = 1` it is the squared-error
//! reduction; with logistic gradients and hessians it is the second-order
//! boosting gain. Leaf values come from a per-model callback.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tweetsift_core::features::{FeatureMatrix, SparseVector};

use crate::{sigmoid, ClassicalError, Classifier, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Preorder; the root is node 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_index(&self, x: &SparseVector) -> usize {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split { feature, threshold, left, right } => {
                    at = if x.get(feature) <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub fn predict(&self, x: &SparseVector) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left as usize).max(go(t, right as usize)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(ClassicalError::Artifact("empty tree".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                Node::Leaf { value } if !value.is_finite() => {
                    return Err(ClassicalError::Artifact(format!("non-finite leaf at node {i}")));
                }
                Node::Split { threshold, left, right, .. } => {
                    let ok = threshold.is_finite()
                        && [left, right].iter().all(|&c| (c as usize) > i && (c as usize) < self.nodes.len());
                    if !ok {
                        return Err(ClassicalError::Artifact(format!("malformed split at node {i}")));
                    }
                }
                Node::Leaf { .. } => {}
            }
        }
        Ok(())
    }

    fn render(&self, out: &mut String, at: usize, indent: usize, names: Option<&[String]>) {
        let pad = "  ".repeat(indent);
        match self.nodes[at] {
            Node::Leaf { value } => {
                let _ = writeln!(out, "{pad}leaf {value}");
            }
            Node::Split { feature, threshold, left, right } => {
                let name = names
                    .and_then(|n| n.get(feature as usize))
                    .map_or_else(|| format!("f{feature}"), Clone::clone);
                let _ = writeln!(out, "{pad}if {name} <= {threshold}");
                self.render(out, left as usize, indent + 1, names);
                let _ = writeln!(out, "{pad}else");
                self.render(out, right as usize, indent + 1, names);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean of the tree outputs (hard 0/1 votes).
    Vote,
    /// `sigmoid(base_margin + sum of tree outputs)`.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub aggregation: Aggregation,
    pub base_margin: f64,
    pub trees: Vec<Tree>,
    /// Training log-loss after each stage for boosted ensembles; empty for
    /// forests.
    pub loss_trace: Vec<f64>,
}

impl TreeEnsemble {
    pub fn margin(&self, x: &SparseVector) -> f64 {
        self.base_margin + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !self.base_margin.is_finite() {
            return Err(ClassicalError::Artifact("non-finite base margin".into()));
        }
        if self.aggregation == Aggregation::Vote && self.trees.is_empty() {
            return Err(ClassicalError::Artifact("forest without trees".into()));
        }
        self.trees.iter().try_for_each(Tree::validate)
    }

    pub fn describe(&self, names: Option<&[String]>) -> String {
        let mut out = format!(
            "{:?} ensemble of {} trees, base margin {}\n",
            self.aggregation,
            self.trees.len(),
            self.base_margin
        );
        for (i, t) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree {i}:");
            t.render(&mut out, 0, 1, names);
        }
        out
    }
}

impl Classifier for TreeEnsemble {
    fn score(&self, x: &SparseVector) -> f64 {
        match self.aggregation {
            Aggregation::Vote => self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64,
            Aggregation::Additive => sigmoid(self.margin(x)),
        }
    }

    fn threshold(&self) -> f64 {
        0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

/// `G^2/(H+l)`, zero when the denominator vanishes.
pub(crate) fn score_term(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d < 1e-12 {
        0.0
    } else {
        g * g / d
    }
}

pub(crate) fn split_gain(left: (f64, f64), right: (f64, f64), lambda: f64, gamma: f64) -> f64 {
    let (gl, hl) = left;
    let (gr, hr) = right;
    0.5 * (score_term(gl, hl, lambda) + score_term(gr, hr, lambda) - score_term(gl + gr, hl + hr, lambda)) - gamma
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

impl Stats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn minus(self, o: Stats) -> Stats {
        Stats { g: self.g - o.g, h: self.h - o.h, n: self.n - o.n }
    }
}

fn push_group(groups: &mut Vec<(f64, Stats)>, v: f64, g: f64, h: f64) {
    match groups.last_mut() {
        Some((last, s)) if *last == v => s.add(g, h),
        _ => {
            let mut s = Stats::default();
            s.add(g, h);
            groups.push((v, s));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitChoice {
    pub feature: u32,
    pub threshold: f64,
    pub gain: f64,
}

/// Grows trees on one feature matrix. Scratch buffers are reused between
/// nodes; `samples` may repeat an index (bootstrap multiplicity).
pub(crate) struct Grower<'a> {
    x: &'a FeatureMatrix,
    g: &'a [f64],
    h: &'a [f64],
    params: GrowParams,
    buckets: Vec<Vec<(f64, u32)>>,
    candidate_stamp: Vec<u32>,
    stamp: u32,
}

impl<'a> Grower<'a> {
    pub fn new(x: &'a FeatureMatrix, g: &'a [f64], h: &'a [f64], params: GrowParams) -> Self {
        Self {
            x,
            g,
            h,
            params,
            buckets: vec![Vec::new(); x.dim],
            candidate_stamp: vec![0; x.dim],
            stamp: 0,
        }
    }

    /// `features` picks the candidate columns for a node (ascending), or
    /// returns `None` to consider every column. `leaf` maps a node's samples
    /// to its output value.
    pub fn grow(
        &mut self,
        samples: Vec<u32>,
        features: &mut dyn FnMut() -> Option<Vec<u32>>,
        leaf: &dyn Fn(&[u32]) -> f64,
    ) -> Tree {
        let mut nodes = Vec::new();
        self.grow_node(&mut nodes, samples, 0, features, leaf);
        Tree { nodes }
    }

    fn grow_node(
        &mut self,
        nodes: &mut Vec<Node>,
        samples: Vec<u32>,
        depth: usize,
        features: &mut dyn FnMut() -> Option<Vec<u32>>,
        leaf: &dyn Fn(&[u32]) -> f64,
    ) -> u32 {
        let id = nodes.len() as u32;
        nodes.push(Node::Leaf { value: 0.0 });
        let choice = if depth >= self.params.max_depth || samples.len() < 2 {
            None
        } else {
            let cands = features();
            self.best_split(&samples, cands.as_deref())
        };
        let Some(choice) = choice else {
            nodes[id as usize] = Node::Leaf { value: leaf(&samples) };
            return id;
        };
        let (l, r): (Vec<u32>, Vec<u32>) = samples
            .iter()
            .partition(|&&i| self.x.rows[i as usize].get(choice.feature) <= choice.threshold);
        drop(samples);
        let left = self.grow_node(nodes, l, depth + 1, features, leaf);
        let right = self.grow_node(nodes, r, depth + 1, features, leaf);
        nodes[id as usize] = Node::Split { feature: choice.feature, threshold: choice.threshold, left, right };
        id
    }

    pub(crate) fn best_split(&mut self, samples: &[u32], candidates: Option<&[u32]>) -> Option<SplitChoice> {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.candidate_stamp.fill(0);
            self.stamp = 1;
        }
        if let Some(c) = candidates {
            for &f in c {
                self.candidate_stamp[f as usize] = self.stamp;
            }
        }
        let mut total = Stats::default();
        let mut touched: Vec<u32> = Vec::new();
        for &i in samples {
            total.add(self.g[i as usize], self.h[i as usize]);
            for &(j, v) in self.x.rows[i as usize].entries() {
                if candidates.is_some() && self.candidate_stamp[j as usize] != self.stamp {
                    continue;
                }
                let bucket = &mut self.buckets[j as usize];
                if bucket.is_empty() {
                    touched.push(j);
                }
                bucket.push((v, i));
            }
        }
        touched.sort_unstable();
        let parent = 0.5 * score_term(total.g, total.h, self.params.lambda);
        let eps = 1e-12 * (1.0 + parent.abs());
        let mut best: Option<SplitChoice> = None;
        for &f in &touched {
            let mut bucket = std::mem::take(&mut self.buckets[f as usize]);
            bucket.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some(c) = self.scan_feature(f, &bucket, total) {
                if c.gain > eps && best.is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
            bucket.clear();
            self.buckets[f as usize] = bucket;
        }
        best
    }

    /// Best threshold of one column given its sorted non-zeros in the node.
    fn scan_feature(&self, feature: u32, nonzero: &[(f64, u32)], total: Stats) -> Option<SplitChoice> {
        let mut nz = Stats::default();
        for &(_, i) in nonzero {
            nz.add(self.g[i as usize], self.h[i as usize]);
        }
        let zero = total.minus(nz);
        let split_at = nonzero.partition_point(|e| e.0 < 0.0);
        // Groups in value order: negatives, the implicit zeros, positives.
        let mut groups: Vec<(f64, Stats)> = Vec::new();
        for &(v, i) in &nonzero[..split_at] {
            push_group(&mut groups, v, self.g[i as usize], self.h[i as usize]);
        }
        if zero.n > 0 {
            groups.push((0.0, zero));
        }
        for &(v, i) in &nonzero[split_at..] {
            push_group(&mut groups, v, self.g[i as usize], self.h[i as usize]);
        }
        let p = self.params;
        let mut left = Stats::default();
        let mut best: Option<SplitChoice> = None;
        for w in 0..groups.len().saturating_sub(1) {
            let s = groups[w].1;
            left.g += s.g;
            left.h += s.h;
            left.n += s.n;
            let right = total.minus(left);
            if left.h < p.min_child_weight || right.h < p.min_child_weight || right.n == 0 {
                continue;
            }
            let gain = split_gain((left.g, left.h), (right.g, right.h), p.lambda, p.gamma);
            if best.is_none_or(|b| gain > b.gain) {
                let (a, b) = (groups[w].0, groups[w + 1].0);
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(SplitChoice { feature, threshold, gain });
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{blobs, matrix};

    fn gini_params(max_depth: usize) -> GrowParams {
        GrowParams { max_depth, lambda: 0.0, gamma: 0.0, min_child_weight: 0.0 }
    }

    fn weighted_gini(labels: &[u8]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let n = labels.len() as f64;
        let p = labels.iter().filter(|&&l| l == 1).count() as f64 / n;
        n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
    }

    #[test]
    fn gain_is_proportional_to_gini_decrease() {
        let (x, y) = blobs(40, 3, 21);
        let g: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
        let h = vec![1.0; y.len()];
        let mut grower = Grower::new(&x, &g, &h, gini_params(1));
        let samples: Vec<u32> = (0..y.len() as u32).collect();
        let choice = grower.best_split(&samples, None).unwrap();

        // Exhaustive scan over every feature and every observed value.
        let parent = weighted_gini(&y);
        let mut best = (f64::NEG_INFINITY, 0u32, 0.0);
        for f in 0..x.dim as u32 {
            let mut values: Vec<f64> = x.rows.iter().map(|r| r.get(f)).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<u8>, Vec<u8>) = {
                    let mut l = Vec::new();
                    let mut r = Vec::new();
                    for (row, &lab) in x.rows.iter().zip(&y) {
                        if row.get(f) <= t { l.push(lab) } else { r.push(lab) }
                    }
                    (l, r)
                };
                let dec = parent - weighted_gini(&l) - weighted_gini(&r);
                if dec > best.0 + 1e-12 {
                    best = (dec, f, t);
                }
            }
        }
        assert_eq!(choice.feature, best.1);
        assert!((choice.threshold - best.2).abs() < 1e-12);
        assert!((4.0 * choice.gain - best.0).abs() < 1e-9, "{} vs {}", 4.0 * choice.gain, best.0);
    }

    #[test]
    fn second_order_gain_matches_four_point_enumeration() {
        let x = matrix(&[vec![0.0, 1.0], vec![1.0, 0.5], vec![2.0, 0.0], vec![3.0, 2.0]]);
        let g = [-0.5, 0.25, -0.3, 0.6];
        let h = [0.25, 0.1875, 0.21, 0.24];
        let (lambda, gamma) = (1.0, 0.01);
        let params = GrowParams { max_depth: 1, lambda, gamma, min_child_weight: 0.0 };
        let mut grower = Grower::new(&x, &g, &h, params);
        let got = grower.best_split(&[0, 1, 2, 3], None).unwrap();

        let obj = |idx: &[usize]| {
            let gs: f64 = idx.iter().map(|&i| g[i]).sum();
            let hs: f64 = idx.iter().map(|&i| h[i]).sum();
            gs * gs / (hs + lambda)
        };
        let mut best = (f64::NEG_INFINITY, 0, 0.0);
        for f in 0..2 {
            let vals: Vec<f64> = (0..4).map(|i| x.rows[i].get(f as u32)).collect();
            for &t in &vals {
                let l: Vec<usize> = (0..4).filter(|&i| vals[i] <= t).collect();
                let r: Vec<usize> = (0..4).filter(|&i| vals[i] > t).collect();
                if r.is_empty() {
                    continue;
                }
                let gain = 0.5 * (obj(&l) + obj(&r) - obj(&[0, 1, 2, 3])) - gamma;
                if gain > best.0 + 1e-15 {
                    best = (gain, f, t);
                }
            }
        }
        assert_eq!(got.feature, best.1 as u32);
        assert!((got.gain - best.0).abs() < 1e-12);
        let left: Vec<usize> = (0..4).filter(|&i| x.rows[i].get(got.feature) <= got.threshold).collect();
        let best_left: Vec<usize> = (0..4).filter(|&i| x.rows[i].get(best.1 as u32) <= best.2).collect();
        assert_eq!(left, best_left);
    }

    #[test]
    fn gamma_blocks_weak_splits_and_depth_is_capped() {
        let (x, y) = blobs(60, 2, 3);
        let g: Vec<f64> = y.iter().map(|&l| f64::from(l) - 0.5).collect();
        let h = vec![1.0; y.len()];
        let samples: Vec<u32> = (0..y.len() as u32).collect();
        let leaf = |s: &[u32]| s.iter().map(|&i| g[i as usize]).sum::<f64>() / s.len() as f64;
        let deep = Grower::new(&x, &g, &h, gini_params(3)).grow(samples.clone(), &mut || None, &leaf);
        assert!(deep.depth() <= 3);
        assert!(deep.n_leaves() > 1);
        let blocked = GrowParams { gamma: 1e9, ..gini_params(3) };
        let stump = Grower::new(&x, &g, &h, blocked).grow(samples.clone(), &mut || None, &leaf);
        assert_eq!(stump.nodes.len(), 1);
        let flat = Grower::new(&x, &g, &h, gini_params(0)).grow(samples, &mut || None, &leaf);
        assert_eq!(flat.nodes.len(), 1);
    }

    #[test]
    fn sparse_negative_values_order_around_zero() {
        let x = matrix(&[vec![-2.0], vec![0.0], vec![0.0], vec![3.0]]);
        let g = [1.0, 0.0, 0.0, 1.0];
        let h = [1.0; 4];
        let mut grower = Grower::new(&x, &g, &h, gini_params(2));
        let samples = vec![0, 1, 2, 3];
        let leaf = |s: &[u32]| s.iter().map(|&i| g[i as usize]).sum::<f64>() / s.len() as f64;
        let t = grower.grow(samples, &mut || None, &leaf);
        for (row, &label) in x.rows.iter().zip(&g) {
            assert_eq!(t.predict(row), label);
        }
        t.validate().unwrap();
    }
}
