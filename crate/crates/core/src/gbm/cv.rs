//! Patient-grouped cross-validation: hyperparameter tuning on inner folds,
//! assessment on outer folds, importance averaging, and the case/control
//! dichotomization rule for continuous targets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::boost::{gbm_fit, GbmHyperParams, GbmModel, Loss};
use crate::error::{Error, Result};
use crate::eval::quantile;
use crate::measure::binned_groups;

/// Hyperparameter search space. The default grid is deliberately small:
/// depth {1,2,3} × trees {50,100,200} × shrinkage {0.05,0.1}, min_leaf 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub max_depths: Vec<usize>,
    pub n_trees: Vec<usize>,
    pub shrinkages: Vec<f64>,
    pub min_leaf: usize,
}

impl Default for TuneGrid {
    fn default() -> Self {
        TuneGrid {
            max_depths: vec![1, 2, 3],
            n_trees: vec![50, 100, 200],
            shrinkages: vec![0.05, 0.1],
            min_leaf: 5,
        }
    }
}

impl TuneGrid {
    /// Grid points in the deterministic enumeration order used for
    /// tie-breaking: depth, then shrinkage, then tree count.
    pub fn points(&self) -> Vec<GbmHyperParams> {
        let mut out = Vec::new();
        for &max_depth in &self.max_depths {
            for &shrinkage in &self.shrinkages {
                for &n_trees in &self.n_trees {
                    out.push(GbmHyperParams {
                        n_trees,
                        max_depth,
                        shrinkage,
                        min_leaf: self.min_leaf,
                    });
                }
            }
        }
        out
    }
}

/// Fold counts and the seed for patient assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub tune_folds: usize,
    pub assess_folds: usize,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            tune_folds: 3,
            assess_folds: 5,
            seed: 0,
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Assign a fold in `0..k` to every row, grouped by patient: all of one
/// patient's rows land in the same fold. Patients are ordered by
/// `(fnv1a(patient ‖ seed), patient)` and dealt round-robin, so assignment
/// depends only on the patient set and the seed — never on row order.
pub fn patient_folds(patient_ids: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need ≥ 2 folds, got {k}")));
    }
    let mut patients: Vec<&String> = patient_ids.iter().collect();
    patients.sort();
    patients.dedup();
    if patients.len() < k {
        return Err(Error::invalid(format!(
            "cannot split {} distinct patients into {k} folds",
            patients.len()
        )));
    }
    let mut keyed: Vec<(u64, &String)> = patients
        .into_iter()
        .map(|p| {
            let mut bytes = p.as_bytes().to_vec();
            bytes.extend_from_slice(&seed.to_le_bytes());
            (fnv1a64(&bytes), p)
        })
        .collect();
    keyed.sort();
    let fold_of: BTreeMap<&String, usize> = keyed
        .iter()
        .enumerate()
        .map(|(i, &(_, p))| (p, i % k))
        .collect();
    Ok(patient_ids.iter().map(|p| fold_of[p]).collect())
}

/// Everything produced by one tune-and-assess run.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    /// Modal best hyperparameters across the outer folds.
    pub best: GbmHyperParams,
    /// Winning grid point of each outer fold.
    pub per_fold_best: Vec<GbmHyperParams>,
    /// Out-of-fold prediction for every input row.
    pub oof_scores: Vec<f64>,
    /// Outer-fold assignment of every input row.
    pub fold_of: Vec<usize>,
    /// The per-outer-fold models (used for importance averaging).
    pub cv_models: Vec<GbmModel>,
    /// Final model refit on all rows with the modal hyperparameters.
    pub final_model: GbmModel,
}

fn subset<T: Clone>(items: &[T], pick: &[usize]) -> Vec<T> {
    pick.iter().map(|&i| items[i].clone()).collect()
}

/// Inner-CV loss of every grid point, in grid order. Models are fitted once
/// per (depth, shrinkage) at the largest tree count and evaluated staged,
/// so tuning `n_trees` costs no extra fits.
fn tune_losses(
    x: &[Vec<f64>],
    y: &[f64],
    patients: &[String],
    loss: Loss,
    grid: &TuneGrid,
    plan: &CvPlan,
    feature_names: &[String],
) -> Result<Vec<f64>> {
    let folds = patient_folds(patients, plan.tune_folds, plan.seed.wrapping_add(1))?;
    let points = grid.points();
    let mut sums = vec![0.0; points.len()];
    let max_trees = *grid.n_trees.iter().max().unwrap();
    for fold in 0..plan.tune_folds {
        let train: Vec<usize> = (0..x.len()).filter(|&i| folds[i] != fold).collect();
        let val: Vec<usize> = (0..x.len()).filter(|&i| folds[i] == fold).collect();
        let (xt, yt) = (subset(x, &train), subset(y, &train));
        let (xv, yv) = (subset(x, &val), subset(y, &val));
        for (di, &max_depth) in grid.max_depths.iter().enumerate() {
            for (si, &shrinkage) in grid.shrinkages.iter().enumerate() {
                let hp = GbmHyperParams {
                    n_trees: max_trees,
                    max_depth,
                    shrinkage,
                    min_leaf: grid.min_leaf,
                };
                let model = gbm_fit(&xt, &yt, loss, &hp, feature_names, plan.seed)?;
                // A degenerate training portion (all targets equal) fits
                // fewer trees than requested; evaluating at the fitted count
                // is exact because later trees would contribute nothing.
                let capped: Vec<usize> = grid
                    .n_trees
                    .iter()
                    .map(|&t| t.min(model.trees.len()))
                    .collect();
                let staged = model.predict_staged(&xv, &capped)?;
                for (ti, preds) in staged.iter().enumerate() {
                    let gi = (di * grid.shrinkages.len() + si) * grid.n_trees.len() + ti;
                    sums[gi] += model.mean_loss(preds, &yv)?;
                }
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| s / plan.tune_folds as f64)
        .collect())
}

/// Outer 5-fold (patient-grouped) assessment around inner 3-fold tuning.
///
/// Each outer fold tunes on its training portion, refits with the winning
/// grid point, and predicts its held-out rows, so every record gets exactly
/// one out-of-fold score. The final model is refit on all rows with the
/// modal winning hyperparameters.
pub fn tune_and_assess(
    x: &[Vec<f64>],
    y: &[f64],
    patients: &[String],
    loss: Loss,
    grid: &TuneGrid,
    plan: &CvPlan,
    feature_names: &[String],
) -> Result<TuneOutcome> {
    if x.len() != y.len() || x.len() != patients.len() || x.is_empty() {
        return Err(Error::Mismatch(format!(
            "tune_and_assess needs matched rows, got {} / {} / {}",
            x.len(),
            y.len(),
            patients.len()
        )));
    }
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::InvalidConfig("empty tuning grid".into()));
    }
    let fold_of = patient_folds(patients, plan.assess_folds, plan.seed)?;
    let mut oof_scores = vec![f64::NAN; x.len()];
    let mut per_fold_best = Vec::with_capacity(plan.assess_folds);
    let mut cv_models = Vec::with_capacity(plan.assess_folds);

    for fold in 0..plan.assess_folds {
        let train: Vec<usize> = (0..x.len()).filter(|&i| fold_of[i] != fold).collect();
        let val: Vec<usize> = (0..x.len()).filter(|&i| fold_of[i] == fold).collect();
        let (xt, yt) = (subset(x, &train), subset(y, &train));
        let pt = subset(patients, &train);
        let losses = tune_losses(&xt, &yt, &pt, loss, grid, plan, feature_names)?;
        // strict < keeps the earliest grid point among ties
        let mut best_i = 0;
        for (i, &l) in losses.iter().enumerate() {
            if l < losses[best_i] {
                best_i = i;
            }
        }
        let hp = points[best_i];
        per_fold_best.push(hp);
        let model = gbm_fit(&xt, &yt, loss, &hp, feature_names, plan.seed)?;
        let xv = subset(x, &val);
        let preds = model.predict(&xv)?;
        for (slot, p) in val.iter().zip(preds) {
            oof_scores[*slot] = p;
        }
        cv_models.push(model);
    }

    // Modal winning grid point; ties go to the earliest point in grid order.
    let mut best = points[0];
    let mut best_count = 0;
    for p in &points {
        let count = per_fold_best.iter().filter(|b| *b == p).count();
        if count > best_count {
            best_count = count;
            best = *p;
        }
    }
    let final_model = gbm_fit(x, y, loss, &best, feature_names, plan.seed)?;
    debug_assert!(oof_scores.iter().all(|s| s.is_finite()));
    Ok(TuneOutcome {
        best,
        per_fold_best,
        oof_scores,
        fold_of,
        cv_models,
        final_model,
    })
}

/// Average per-feature importance across CV models (each already normalized
/// to sum 100), plus the binned report: profile pixels aggregated into
/// 5 consecutive groups of 4 per lead-segment, intervals kept individual,
/// sorted by descending importance (name as the deterministic tie-break).
pub fn variable_importance(models: &[GbmModel]) -> Result<(Vec<f64>, Vec<(String, f64)>)> {
    let Some(first) = models.first() else {
        return Err(Error::invalid("variable_importance needs ≥ 1 model"));
    };
    let n = first.importance.len();
    if models.iter().any(|m| m.importance.len() != n) {
        return Err(Error::Mismatch("models disagree on feature count".into()));
    }
    let mut mean = vec![0.0; n];
    for model in models {
        for (dst, v) in mean.iter_mut().zip(&model.importance) {
            *dst += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= models.len() as f64);

    let mut report: Vec<(String, f64)> = binned_groups()
        .into_iter()
        .map(|(name, members)| {
            let sum = members
                .iter()
                .map(|&i| if i < n { mean[i] } else { 0.0 })
                .sum();
            (name, sum)
        })
        .collect();
    report.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok((mean, report))
}

/// Which tail of the target distribution counts as diseased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseDirection {
    HighIsCase,
    LowIsCase,
}

/// Dichotomize a continuous target: cases strictly beyond the extreme decile
/// (above the 90th or below the 10th percentile), controls strictly on the
/// other side of the median, the middle excluded (`None`). Rejects
/// distributions too degenerate to separate the two cut points.
pub fn make_dichotomous_labels(
    values: &[f64],
    direction: CaseDirection,
) -> Result<Vec<Option<bool>>> {
    if values.len() < 10 {
        return Err(Error::invalid(format!(
            "dichotomization needs ≥ 10 values, got {}",
            values.len()
        )));
    }
    let median = quantile(values, 0.5)?;
    let extreme = match direction {
        CaseDirection::HighIsCase => quantile(values, 0.9)?,
        CaseDirection::LowIsCase => quantile(values, 0.1)?,
    };
    if extreme == median {
        return Err(Error::invalid(
            "degenerate distribution: extreme decile equals the median",
        ));
    }
    Ok(values
        .iter()
        .map(|&v| match direction {
            CaseDirection::HighIsCase if v > extreme => Some(true),
            CaseDirection::HighIsCase if v < median => Some(false),
            CaseDirection::LowIsCase if v < extreme => Some(true),
            CaseDirection::LowIsCase if v > median => Some(false),
            _ => None,
        })
        .collect())
}
