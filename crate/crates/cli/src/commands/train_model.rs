//! `ecg train-model`: tune and assess a gradient-boosted model over the
//! profile table with patient-grouped cross-validation, then refit on all
//! rows and emit the model, out-of-fold scores, and variable importance.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};
use ecg_core::eval::{abs_dev_percentiles, auroc, delong_ci};
use ecg_core::gbm::{
    make_dichotomous_labels, read_targets_csv, save_gbm, tune_and_assess, variable_importance,
    CaseDirection, CvPlan, Loss, TuneGrid,
};
use ecg_core::measure::{feature_names, read_profile_table};

use crate::config::{Overrides, RunLog};

use super::fmt_f64;

pub fn run(
    profiles_path: &Path,
    targets_path: &Path,
    out: &Path,
    seed_flag: Option<u64>,
    scale: &str,
    mut ov: Overrides,
) -> Result<()> {
    let seed = seed_flag.or(ov.u64("seed")?).unwrap_or(0);

    let loss_raw = ov.get("loss");
    let mut loss = match loss_raw.as_deref() {
        None | Some("squared") => Loss::Squared,
        Some("logistic") => Loss::Logistic,
        Some(other) => bail!("config key loss: expected squared or logistic, got {other:?}"),
    };
    let dichotomize = match ov.get("dichotomize").as_deref() {
        None | Some("none") => None,
        Some("high") => Some(CaseDirection::HighIsCase),
        Some("low") => Some(CaseDirection::LowIsCase),
        Some(other) => {
            bail!("config key dichotomize: expected none, high, or low, got {other:?}")
        }
    };
    if dichotomize.is_some() && loss_raw.as_deref() == Some("squared") {
        bail!("dichotomize turns the target into case/control labels; loss must be logistic");
    }
    let mut grid = TuneGrid::default();
    if let Some(v) = ov.usize_list("depths")? {
        grid.max_depths = v;
    }
    if let Some(v) = ov.usize_list("trees")? {
        grid.n_trees = v;
    }
    if let Some(v) = ov.f64_list("shrinkages")? {
        grid.shrinkages = v;
    }
    if let Some(v) = ov.usize("min_leaf")? {
        grid.min_leaf = v;
    }
    let plan = CvPlan {
        tune_folds: ov.usize("tune_folds")?.unwrap_or(3),
        assess_folds: ov.usize("assess_folds")?.unwrap_or(5),
        seed,
    };
    ov.finish()?;

    let profile_rows = read_profile_table(profiles_path)?;
    let targets = read_targets_csv(targets_path)?;
    let mut x = Vec::with_capacity(profile_rows.len());
    let mut y = Vec::with_capacity(profile_rows.len());
    let mut patients = Vec::with_capacity(profile_rows.len());
    let mut kept_rows = Vec::with_capacity(profile_rows.len());
    for row in &profile_rows {
        let Some(&t) = targets.get(&row.record_id) else {
            bail!(
                "{}: no target for record {:?}",
                targets_path.display(),
                row.record_id
            );
        };
        x.push(row.values.clone());
        y.push(t);
        patients.push(row.patient_id.clone());
        kept_rows.push(row);
    }
    let unused = targets.len() - kept_rows.len();
    if unused > 0 {
        eprintln!("warning: {unused} target(s) have no profiled record and were ignored");
    }

    if let Some(direction) = dichotomize {
        let flags = make_dichotomous_labels(&y, direction)?;
        let mut dx = Vec::new();
        let mut dy = Vec::new();
        let mut dp = Vec::new();
        let mut dr = Vec::new();
        for (i, flag) in flags.iter().enumerate() {
            if let Some(is_case) = flag {
                dx.push(std::mem::take(&mut x[i]));
                dy.push(if *is_case { 1.0 } else { 0.0 });
                dp.push(std::mem::take(&mut patients[i]));
                dr.push(kept_rows[i]);
            }
        }
        println!(
            "dichotomized {} rows into {} cases / {} controls ({} middle rows dropped)",
            flags.len(),
            dy.iter().filter(|v| **v == 1.0).count(),
            dy.iter().filter(|v| **v == 0.0).count(),
            flags.iter().filter(|f| f.is_none()).count()
        );
        x = dx;
        y = dy;
        patients = dp;
        kept_rows = dr;
        loss = Loss::Logistic;
    }

    let names = feature_names();
    let outcome = tune_and_assess(&x, &y, &patients, loss, &grid, &plan, &names)?;
    save_gbm(&outcome.final_model, &out.join("gbm.json"))?;

    let mut w = csv::Writer::from_path(out.join("oof_scores.csv"))?;
    w.write_record(["record_id", "patient_id", "acquired_date", "fold", "target", "score"])?;
    for (i, row) in kept_rows.iter().enumerate() {
        w.write_record([
            row.record_id.clone(),
            row.patient_id.clone(),
            row.acquired_date.to_string(),
            outcome.fold_of[i].to_string(),
            fmt_f64(y[i]),
            fmt_f64(outcome.oof_scores[i]),
        ])?;
    }
    w.flush()?;

    let (mean_importance, binned) = variable_importance(&outcome.cv_models)?;
    let mut w = csv::Writer::from_path(out.join("importance.csv"))?;
    w.write_record(["feature", "importance"])?;
    for (name, v) in names.iter().zip(&mean_importance) {
        w.write_record([name.clone(), fmt_f64(*v)])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("importance_binned.csv"))?;
    w.write_record(["group", "importance"])?;
    for (name, v) in &binned {
        w.write_record([name.clone(), fmt_f64(*v)])?;
    }
    w.flush()?;

    // Headline out-of-fold quality, matched to the loss.
    let mut report: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    report.insert("loss".into(), serde_json::json!(format!("{loss:?}").to_lowercase()));
    report.insert("n_rows".into(), serde_json::json!(x.len()));
    report.insert("best".into(), serde_json::to_value(outcome.best)?);
    report.insert("per_fold_best".into(), serde_json::to_value(&outcome.per_fold_best)?);
    let headline = match loss {
        Loss::Logistic => {
            let flags: Vec<bool> = y.iter().map(|v| *v == 1.0).collect();
            let roc = auroc(&outcome.oof_scores, &flags)?;
            let (auc, lo, hi) = delong_ci(&outcome.oof_scores, &flags, 0.95)?;
            report.insert("oof_auroc".into(), serde_json::json!(roc.auroc));
            report.insert("oof_auroc_ci95".into(), serde_json::json!([lo, hi]));
            format!("OOF AUROC {:.3} (95% CI {:.3}-{:.3})", auc, lo, hi)
        }
        Loss::Squared => {
            let dev = abs_dev_percentiles(&outcome.oof_scores, &y)?;
            report.insert(
                "oof_abs_dev_pct".into(),
                serde_json::json!({"p50": dev.p50, "p75": dev.p75, "p95": dev.p95}),
            );
            format!("OOF median absolute deviation {:.2}% of reference", dev.p50)
        }
    };
    std::fs::write(
        out.join("cv_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    let mut log = RunLog::new("train-model", seed, scale);
    log.set_path("profiles", profiles_path)
        .set_path("targets", targets_path)
        .set("loss", format!("{loss:?}").to_lowercase())
        .set(
            "dichotomize",
            match dichotomize {
                None => "none",
                Some(CaseDirection::HighIsCase) => "high",
                Some(CaseDirection::LowIsCase) => "low",
            },
        )
        .set("depths", serde_json::json!(grid.max_depths))
        .set("trees", serde_json::json!(grid.n_trees))
        .set("shrinkages", serde_json::json!(grid.shrinkages))
        .set("min_leaf", grid.min_leaf as u64)
        .set("tune_folds", plan.tune_folds as u64)
        .set("assess_folds", plan.assess_folds as u64);
    log.write(out)?;

    println!(
        "fitted {} rows; best {:?}; {}",
        x.len(),
        outcome.best,
        headline
    );
    Ok(())
}
