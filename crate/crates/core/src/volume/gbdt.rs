//! Squared-error gradient boosting over axis-aligned regression trees.
//!
//! Trees grow level by level. Each feature's row order is sorted once, and
//! every level scans those orders to find the best split of all open nodes.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    k = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], k: usize) -> usize {
            match &nodes[k] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Recorded for reproducibility; fitting itself draws no randomness.
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            n_estimators: 20_000,
            max_depth: 4,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    /// Small, fast settings for tests and desk-scale runs.
    pub fn ci() -> Self {
        Self {
            learning_rate: 0.1,
            n_estimators: 300,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base: f64,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub trees: Vec<RegressionTree>,
    /// Training MSE after 0, 1, ..., n_estimators trees.
    pub train_mse: Vec<f64>,
}

pub fn gbdt_predict(model: &GbdtModel, x: ArrayView1<f64>) -> f64 {
    model.base + model.learning_rate * model.trees.iter().map(|t| t.predict(x)).sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeStats {
    count: usize,
    sum: f64,
    sum_sq: f64,
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

fn fit_tree(
    x: &Array2<f64>,
    residual: &[f64],
    sorted: &[Vec<usize>],
    max_depth: usize,
    min_leaf: usize,
) -> RegressionTree {
    let n = residual.len();
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { value: 0.0 }];
    let mut node_of = vec![0usize; n];
    let mut open: Vec<usize> = vec![0];
    for depth in 0..=max_depth {
        // position of each tree node in `open`, usize::MAX when closed
        let mut open_pos = vec![usize::MAX; nodes.len()];
        for (p, &k) in open.iter().enumerate() {
            open_pos[k] = p;
        }
        let mut stats = vec![NodeStats::default(); open.len()];
        for (r, &k) in node_of.iter().enumerate() {
            let p = open_pos[k];
            if p != usize::MAX {
                stats[p].count += 1;
                stats[p].sum += residual[r];
                stats[p].sum_sq += residual[r] * residual[r];
            }
        }
        if depth == max_depth {
            for (p, &k) in open.iter().enumerate() {
                nodes[k] = TreeNode::Leaf { value: stats[p].sum / stats[p].count as f64 };
            }
            break;
        }

        let per_feature: Vec<Vec<Option<Candidate>>> = (0..x.ncols())
            .into_par_iter()
            .map(|f| {
                let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
                let mut left = vec![(0usize, 0.0f64, f64::NAN); open.len()];
                for &r in &sorted[f] {
                    let p = open_pos[node_of[r]];
                    if p == usize::MAX {
                        continue;
                    }
                    let v = x[[r, f]];
                    let (cnt, sum, last) = left[p];
                    let total = stats[p];
                    if cnt >= min_leaf && total.count - cnt >= min_leaf && v > last {
                        let rc = (total.count - cnt) as f64;
                        let gain = sum * sum / cnt as f64 + (total.sum - sum).powi(2) / rc
                            - total.sum * total.sum / total.count as f64;
                        if best[p].is_none_or(|b| gain > b.gain) {
                            best[p] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold: midpoint(last, v),
                            });
                        }
                    }
                    left[p] = (cnt + 1, sum + residual[r], v);
                }
                best
            })
            .collect();

        let mut next_open = Vec::new();
        let mut split_children = vec![None; open.len()];
        for (p, &k) in open.iter().enumerate() {
            let mut best: Option<Candidate> = None;
            for cands in &per_feature {
                if let Some(c) = cands[p] {
                    if best.is_none_or(|b| c.gain > b.gain) {
                        best = Some(c);
                    }
                }
            }
            let s = stats[p];
            let sse = s.sum_sq - s.sum * s.sum / s.count as f64;
            match best {
                Some(c) if c.gain > f64::EPSILON * s.sum_sq.max(sse) && c.gain > 0.0 => {
                    let l = nodes.len();
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes[k] = TreeNode::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: l,
                        right: l + 1,
                    };
                    split_children[p] = Some((c.feature, c.threshold, l));
                    next_open.push(l);
                    next_open.push(l + 1);
                }
                _ => {
                    nodes[k] = TreeNode::Leaf { value: s.sum / s.count as f64 };
                }
            }
        }
        if next_open.is_empty() {
            break;
        }
        for (r, k) in node_of.iter_mut().enumerate() {
            let p = open_pos[*k];
            if p == usize::MAX {
                continue;
            }
            if let Some((f, thr, l)) = split_children[p] {
                *k = if x[[r, f]] <= thr { l } else { l + 1 };
            }
        }
        open = next_open;
    }
    RegressionTree { nodes }
}

pub fn gbdt_fit(x: &Array2<f64>, y: &[f64], config: &GbdtConfig) -> Result<GbdtModel> {
    if y.is_empty() {
        return Err(FlowError::EmptyDataset("no training rows for the volume model".into()));
    }
    if x.nrows() != y.len() {
        return Err(FlowError::DimensionMismatch(format!("{} feature rows, {} targets", x.nrows(), y.len())));
    }
    if let Some(k) = y.iter().position(|v| !v.is_finite()) {
        return Err(FlowError::NonFinite(format!("target at row {k}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::NonFinite("feature matrix".into()));
    }
    if config.min_samples_leaf == 0 || !(config.learning_rate.is_finite() && config.learning_rate >= 0.0) {
        return Err(FlowError::Config("min_samples_leaf must be positive and learning_rate non-negative".into()));
    }
    let base = if y.iter().all(|&v| v == y[0]) {
        y[0]
    } else {
        y.iter().sum::<f64>() / y.len() as f64
    };
    let sorted: Vec<Vec<usize>> = (0..x.ncols())
        .into_par_iter()
        .map(|f| {
            let mut idx: Vec<usize> = (0..y.len()).collect();
            idx.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut pred = vec![base; y.len()];
    let mut train_mse = vec![mse(y, &pred)];
    let mut trees = Vec::with_capacity(config.n_estimators);
    for _ in 0..config.n_estimators {
        let residual: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let tree = fit_tree(x, &residual, &sorted, config.max_depth, config.min_samples_leaf);
        for (r, p) in pred.iter_mut().enumerate() {
            *p += config.learning_rate * tree.predict(x.row(r));
        }
        train_mse.push(mse(y, &pred));
        trees.push(tree);
    }
    Ok(GbdtModel {
        base,
        learning_rate: config.learning_rate,
        n_estimators: config.n_estimators,
        max_depth: config.max_depth,
        trees,
        train_mse,
    })
}
