//! Least-squares regression trees: the base learner for the boosted models.
//!
//! Split search is exhaustive over midpoints between consecutive distinct
//! feature values, implemented with per-feature presorted index lists that
//! are partitioned as the tree grows, so each node's candidate scan is a
//! single ordered pass per feature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted binary regression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: TreeNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl RegressionTree {
    /// Predict one row: descend left when `x[feature] ≤ threshold`.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Largest feature index referenced anywhere in the tree, if any split
    /// exists. Used to validate loaded model files.
    pub fn max_feature(&self) -> Option<usize> {
        fn walk(node: &TreeNode, best: &mut Option<usize>) {
            if let TreeNode::Split {
                feature, left, right, ..
            } = node
            {
                *best = Some(best.map_or(*feature, |b| b.max(*feature)));
                walk(left, best);
                walk(right, best);
            }
        }
        let mut best = None;
        walk(&self.root, &mut best);
        best
    }

    /// Flatten to a preorder node list for the on-disk format.
    pub fn to_preorder(&self) -> Vec<FlatNode> {
        fn walk(node: &TreeNode, out: &mut Vec<FlatNode>) {
            match node {
                TreeNode::Leaf { value } => out.push(FlatNode {
                    feature: -1,
                    value: *value,
                }),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(FlatNode {
                        feature: *feature as i64,
                        value: *threshold,
                    });
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Rebuild from a preorder node list, rejecting malformed shapes.
    pub fn from_preorder(nodes: &[FlatNode]) -> Result<RegressionTree> {
        fn build(nodes: &[FlatNode], at: &mut usize) -> Result<TreeNode> {
            let node = *nodes
                .get(*at)
                .ok_or_else(|| Error::Format("tree preorder list ended early".into()))?;
            *at += 1;
            if node.feature < 0 {
                Ok(TreeNode::Leaf { value: node.value })
            } else {
                let left = build(nodes, at)?;
                let right = build(nodes, at)?;
                Ok(TreeNode::Split {
                    feature: node.feature as usize,
                    threshold: node.value,
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
        }
        let mut at = 0;
        let root = build(nodes, &mut at)?;
        if at != nodes.len() {
            return Err(Error::Format(format!(
                "tree preorder list has {} trailing nodes",
                nodes.len() - at
            )));
        }
        Ok(RegressionTree { root })
    }
}

/// One preorder node: `feature < 0` marks a leaf carrying its value in
/// `value`; otherwise `value` is the split threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatNode {
    pub feature: i64,
    pub value: f64,
}

/// Per-node working set: this node's row indices, once per feature, each
/// list sorted by that feature's value.
struct NodeRows {
    by_feature: Vec<Vec<u32>>,
}

struct FitCtx<'a> {
    x: &'a [Vec<f64>],
    residuals: &'a [f64],
    min_leaf: usize,
    /// Split-improvement accumulator, one slot per feature.
    gains: &'a mut [f64],
}

/// Best split of one node: squared-error improvement, feature, threshold.
/// `None` when no admissible split improves on the node as a leaf.
fn best_split(ctx: &FitCtx, rows: &NodeRows) -> Option<(f64, usize, f64)> {
    let n = rows.by_feature[0].len();
    if n < 2 * ctx.min_leaf {
        return None;
    }
    let total: f64 = rows.by_feature[0]
        .iter()
        .map(|&i| ctx.residuals[i as usize])
        .sum();
    // A constant-residual node cannot be improved; skip it before float
    // noise in the gain formula manufactures a spurious positive gain.
    let first = ctx.residuals[rows.by_feature[0][0] as usize];
    if rows.by_feature[0]
        .iter()
        .all(|&i| ctx.residuals[i as usize] == first)
    {
        return None;
    }

    let mut best: Option<(f64, usize, f64)> = None;
    for (f, idx) in rows.by_feature.iter().enumerate() {
        let mut left_sum = 0.0;
        for (k, &i) in idx.iter().enumerate().take(n - 1) {
            left_sum += ctx.residuals[i as usize];
            let nl = k + 1;
            let nr = n - nl;
            let (a, b) = (ctx.x[i as usize][f], ctx.x[idx[k + 1] as usize][f]);
            if a == b || nl < ctx.min_leaf || nr < ctx.min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64
                - total * total / n as f64;
            if gain <= 0.0 {
                continue;
            }
            let threshold = (a + b) / 2.0;
            // Strict > keeps the lowest (feature, threshold) among ties,
            // because features ascend and thresholds ascend within a feature.
            if best.map_or(true, |(g, _, _)| gain > g) {
                best = Some((gain, f, threshold));
            }
        }
    }
    best
}

fn grow(ctx: &mut FitCtx, rows: NodeRows, depth_left: usize) -> TreeNode {
    let n = rows.by_feature[0].len();
    let mean = rows.by_feature[0]
        .iter()
        .map(|&i| ctx.residuals[i as usize])
        .sum::<f64>()
        / n as f64;
    if depth_left == 0 {
        return TreeNode::Leaf { value: mean };
    }
    let Some((gain, feature, threshold)) = best_split(ctx, &rows) else {
        return TreeNode::Leaf { value: mean };
    };
    ctx.gains[feature] += gain;

    // Partition every feature's ordered index list by the chosen test; the
    // pass is stable, so children inherit sorted lists for free.
    let n_features = rows.by_feature.len();
    let mut left = NodeRows {
        by_feature: Vec::with_capacity(n_features),
    };
    let mut right = NodeRows {
        by_feature: Vec::with_capacity(n_features),
    };
    for idx in rows.by_feature {
        let mut l = Vec::new();
        let mut r = Vec::new();
        for i in idx {
            if ctx.x[i as usize][feature] <= threshold {
                l.push(i);
            } else {
                r.push(i);
            }
        }
        left.by_feature.push(l);
        right.by_feature.push(r);
    }
    let left_node = grow(ctx, left, depth_left - 1);
    let right_node = grow(ctx, right, depth_left - 1);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(left_node),
        right: Box::new(right_node),
    }
}

/// Fit one tree to `residuals`, additionally accumulating each split's
/// squared-error improvement into `gains` (one slot per feature).
pub(crate) fn fit_tree_with_gains(
    x: &[Vec<f64>],
    residuals: &[f64],
    max_depth: usize,
    min_leaf: usize,
    gains: &mut [f64],
) -> Result<RegressionTree> {
    if x.is_empty() || x.len() != residuals.len() {
        return Err(Error::Mismatch(format!(
            "tree fit needs matched rows, got {} rows vs {} residuals",
            x.len(),
            residuals.len()
        )));
    }
    if min_leaf == 0 {
        return Err(Error::InvalidConfig("min_leaf must be ≥ 1".into()));
    }
    let n_features = x[0].len();
    if x.iter().any(|row| row.len() != n_features) || gains.len() != n_features {
        return Err(Error::Mismatch("ragged feature matrix".into()));
    }
    let mut by_feature = Vec::with_capacity(n_features);
    for f in 0..n_features {
        let mut idx: Vec<u32> = (0..x.len() as u32).collect();
        idx.sort_by(|&a, &b| x[a as usize][f].total_cmp(&x[b as usize][f]));
        by_feature.push(idx);
    }
    let mut ctx = FitCtx {
        x,
        residuals,
        min_leaf,
        gains,
    };
    let root = grow(&mut ctx, NodeRows { by_feature }, max_depth);
    Ok(RegressionTree { root })
}

/// Fit a least-squares tree: greedy best-split by squared-error reduction,
/// candidate thresholds at midpoints of consecutive distinct values, ties
/// toward the lowest (feature, threshold), leaves predicting the mean
/// residual. With no admissible split the tree is a single leaf.
pub fn fit_tree(
    x: &[Vec<f64>],
    residuals: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    let n_features = x.first().map_or(0, |r| r.len());
    let mut gains = vec![0.0; n_features];
    fit_tree_with_gains(x, residuals, max_depth, min_leaf, &mut gains)
}
