//! Gradient boosting over least-squares trees, for both continuous targets
//! and binary classification.
//!
//! Each tree fits the current negative gradient: `y − F` for squared loss,
//! `y − σ(F)` for logistic loss, with plain mean-residual leaves in both
//! cases. Fitting is deterministic; rows are first brought into a canonical
//! order so a permuted training table yields the identical model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_with_gains, FlatNode, RegressionTree};
use crate::error::{Error, Result};

/// Format stamp written into model files.
pub const GBM_FORMAT_VERSION: &str = "ecg-gbm-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Squared,
    Logistic,
}

/// Hyperparameters of one boosted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmHyperParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
}

impl GbmHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.shrinkage && self.shrinkage <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "shrinkage {} outside (0, 1]",
                self.shrinkage
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig("min_leaf must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// A fitted boosted ensemble.
///
/// Prediction is `init_value + shrinkage × Σ tree(x)`, passed through the
/// sigmoid for logistic loss. `importance` holds the per-feature total
/// split improvement, normalized to sum 100 (all zeros for a tree-free
/// model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub loss: Loss,
    pub init_value: f64,
    pub shrinkage: f64,
    pub trees: Vec<RegressionTree>,
    pub feature_names: Vec<String>,
    pub importance: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Canonical row order: lexicographic by feature vector, then target.
/// Sorting indices this way makes the fit invariant to input row order.
fn canonical_order(x: &[Vec<f64>], y: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        for (va, vb) in x[a].iter().zip(&x[b]) {
            let c = va.total_cmp(vb);
            if c != std::cmp::Ordering::Equal {
                return c;
            }
        }
        y[a].total_cmp(&y[b])
    });
    order
}

/// Fit a boosted model.
///
/// `seed` is accepted for interface stability but unused: fitting has no
/// stochastic element (no subsampling). Degenerate all-equal targets yield
/// a tree-free model carrying only the initial value, with a warning.
pub fn gbm_fit(
    x: &[Vec<f64>],
    y: &[f64],
    loss: Loss,
    hp: &GbmHyperParams,
    feature_names: &[String],
    _seed: u64,
) -> Result<GbmModel> {
    hp.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Mismatch(format!(
            "GBM fit needs matched rows, got {} rows vs {} targets",
            x.len(),
            y.len()
        )));
    }
    let n_features = feature_names.len();
    if x.iter().any(|row| row.len() != n_features) {
        return Err(Error::Mismatch(format!(
            "feature rows must have {n_features} columns to match the feature names"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("GBM targets must be finite".into()));
    }
    if loss == Loss::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("logistic loss needs targets in {0, 1}"));
    }

    let order = canonical_order(x, y);
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let init_value = match loss {
        Loss::Squared => mean,
        Loss::Logistic => {
            // Clamp so an all-0 or all-1 cohort still yields a finite,
            // serializable log-odds.
            let p = mean.clamp(1e-9, 1.0 - 1e-9);
            (p / (1.0 - p)).ln()
        }
    };

    if ys.iter().all(|&v| v == ys[0]) {
        eprintln!("warning: all targets equal ({}); fitting no trees", ys[0]);
        return Ok(GbmModel {
            loss,
            init_value,
            shrinkage: hp.shrinkage,
            trees: Vec::new(),
            feature_names: feature_names.to_vec(),
            importance: vec![0.0; n_features],
        });
    }

    let mut raw = vec![init_value; ys.len()];
    let mut trees = Vec::with_capacity(hp.n_trees);
    let mut gains = vec![0.0; n_features];
    let mut residuals = vec![0.0; ys.len()];
    for _ in 0..hp.n_trees {
        for i in 0..ys.len() {
            residuals[i] = match loss {
                Loss::Squared => ys[i] - raw[i],
                Loss::Logistic => ys[i] - sigmoid(raw[i]),
            };
        }
        let tree = fit_tree_with_gains(&xs, &residuals, hp.max_depth, hp.min_leaf, &mut gains)?;
        for (i, row) in xs.iter().enumerate() {
            raw[i] += hp.shrinkage * tree.predict_row(row);
        }
        trees.push(tree);
    }

    let total: f64 = gains.iter().sum();
    let importance = if total > 0.0 {
        gains.iter().map(|g| g / total * 100.0).collect()
    } else {
        vec![0.0; n_features]
    };
    Ok(GbmModel {
        loss,
        init_value,
        shrinkage: hp.shrinkage,
        trees,
        feature_names: feature_names.to_vec(),
        importance,
    })
}

impl GbmModel {
    fn check_columns(&self, x: &[Vec<f64>]) -> Result<()> {
        let n = self.feature_names.len();
        if let Some(bad) = x.iter().find(|row| row.len() != n) {
            return Err(Error::Mismatch(format!(
                "prediction rows need {n} columns, got {}",
                bad.len()
            )));
        }
        Ok(())
    }

    fn raw_score(&self, row: &[f64], n_trees: usize) -> f64 {
        let mut z = self.init_value;
        for tree in &self.trees[..n_trees] {
            z += self.shrinkage * tree.predict_row(row);
        }
        z
    }

    fn link(&self, z: f64) -> f64 {
        match self.loss {
            Loss::Squared => z,
            Loss::Logistic => sigmoid(z),
        }
    }

    /// Predict all rows: regression values, or probabilities for logistic.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_columns(x)?;
        Ok(x.iter()
            .map(|row| self.link(self.raw_score(row, self.trees.len())))
            .collect())
    }

    /// Predictions truncated to the first `k` trees for each checkpoint `k`,
    /// in one pass per row — the staged evaluation used to tune `n_trees`.
    pub fn predict_staged(&self, x: &[Vec<f64>], checkpoints: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_columns(x)?;
        if checkpoints.iter().any(|&k| k > self.trees.len()) {
            return Err(Error::invalid(format!(
                "staged checkpoint beyond the {} fitted trees",
                self.trees.len()
            )));
        }
        let mut out = vec![vec![0.0; x.len()]; checkpoints.len()];
        for (ri, row) in x.iter().enumerate() {
            let mut z = self.init_value;
            let mut used = 0;
            let mut sorted: Vec<(usize, usize)> =
                checkpoints.iter().copied().enumerate().collect();
            sorted.sort_by_key(|&(_, k)| k);
            for (ci, k) in sorted {
                while used < k {
                    z += self.shrinkage * self.trees[used].predict_row(row);
                    used += 1;
                }
                out[ci][ri] = self.link(z);
            }
        }
        Ok(out)
    }

    /// Mean training loss (squared error or log loss) of given predictions.
    pub fn mean_loss(&self, predictions: &[f64], y: &[f64]) -> Result<f64> {
        if predictions.len() != y.len() || y.is_empty() {
            return Err(Error::Mismatch("loss needs matched nonempty slices".into()));
        }
        let mut sum = 0.0;
        for (&p, &t) in predictions.iter().zip(y) {
            sum += match self.loss {
                Loss::Squared => (p - t) * (p - t),
                Loss::Logistic => {
                    let p = p.clamp(1e-12, 1.0 - 1e-12);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                }
            };
        }
        Ok(sum / y.len() as f64)
    }
}

#[derive(Serialize, Deserialize)]
struct GbmFile {
    layout_version: String,
    loss: Loss,
    init_value: f64,
    shrinkage: f64,
    /// One preorder node list per tree.
    trees: Vec<Vec<FlatNode>>,
    feature_names: Vec<String>,
    importance: Vec<f64>,
}

/// Write a boosted model as JSON with preorder-serialized trees.
pub fn save_gbm(model: &GbmModel, path: &std::path::Path) -> Result<()> {
    let file = GbmFile {
        layout_version: GBM_FORMAT_VERSION.into(),
        loss: model.loss,
        init_value: model.init_value,
        shrinkage: model.shrinkage,
        trees: model.trees.iter().map(|t| t.to_preorder()).collect(),
        feature_names: model.feature_names.clone(),
        importance: model.importance.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Load a boosted model, refusing layout-version mismatches and trees that
/// reference features beyond the recorded names.
pub fn load_gbm(path: &std::path::Path) -> Result<GbmModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let file: GbmFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.layout_version != GBM_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "model file has layout version {:?}, this build reads {:?}",
            file.layout_version, GBM_FORMAT_VERSION
        )));
    }
    let trees = file
        .trees
        .iter()
        .map(|flat| RegressionTree::from_preorder(flat))
        .collect::<Result<Vec<_>>>()?;
    if file.importance.len() != file.feature_names.len() {
        return Err(Error::Format(format!(
            "importance length {} vs {} feature names",
            file.importance.len(),
            file.feature_names.len()
        )));
    }
    for tree in &trees {
        if let Some(f) = tree.max_feature() {
            if f >= file.feature_names.len() {
                return Err(Error::Format(format!(
                    "tree references feature {f} but only {} names are recorded",
                    file.feature_names.len()
                )));
            }
        }
    }
    Ok(GbmModel {
        loss: file.loss,
        init_value: file.init_value,
        shrinkage: file.shrinkage,
        trees,
        feature_names: file.feature_names,
        importance: file.importance,
    })
}

/// Read a targets CSV (`record_id,target`) into an id → value map.
pub fn read_targets_csv(path: &std::path::Path) -> Result<BTreeMap<String, f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("record_id") || header.get(1) != Some("target") {
        return Err(Error::Format(format!(
            "targets CSV must start with header record_id,target, got {header:?}"
        )));
    }
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let id = rec
            .get(0)
            .ok_or_else(|| Error::Format(format!("targets row {i}: missing record_id")))?;
        let value: f64 = rec
            .get(1)
            .ok_or_else(|| Error::Format(format!("targets row {i}: missing target")))?
            .parse()
            .map_err(|e| Error::Format(format!("targets row {i}: {e}")))?;
        if out.insert(id.to_string(), value).is_some() {
            return Err(Error::Format(format!("targets CSV repeats record_id {id:?}")));
        }
    }
    Ok(out)
}

/// Write a targets CSV in the shape [`read_targets_csv`] expects.
pub fn write_targets_csv(
    targets: &BTreeMap<String, f64>,
    path: &std::path::Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["record_id", "target"])?;
    for (id, value) in targets {
        w.write_record([id.clone(), format!("{value:?}")])?;
    }
    w.flush()?;
    Ok(())
}
