//! `ecg eval`: agreement, IoU, and ROC metrics between pipeline outputs and
//! references. Each mode writes `metrics.json` plus its plot-data CSVs.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};
use ecg_core::eval::{
    abs_dev_percentiles, auroc, bland_altman_bands, delong_ci, iou_per_class, threshold_for,
    write_bland_altman_csv, write_metric_report, write_roc_csv, MetricReport,
};
use ecg_core::io::{read_label_file, read_manifest};
use ecg_core::plot::Plot;
use ecg_core::types::{SegmentClass, N_CLASSES};

use crate::config::{Overrides, RunLog};

use super::{read_intervals_csv, read_scores_csv, INTERVAL_KEYS};

/// Interval agreement: per-metric absolute-deviation percentiles and
/// Bland-Altman bands, plus the fraction of records passing the < 10% mean
/// fractional-difference gate over heart rate, PR, QRS, and QT.
pub fn agreement(
    est_path: &Path,
    ref_path: &Path,
    out: &Path,
    svg: bool,
    seed_flag: Option<u64>,
    scale: &str,
    mut ov: Overrides,
) -> Result<()> {
    let seed = seed_flag.or(ov.u64("seed")?).unwrap_or(0);
    ov.finish()?;

    let est_rows = read_intervals_csv(est_path)?;
    let ref_rows: BTreeMap<String, [f64; 5]> = read_intervals_csv(ref_path)?
        .into_iter()
        .map(|r| (r.record_id, r.values))
        .collect();
    let mut est = Vec::new();
    let mut reference = Vec::new();
    for row in &est_rows {
        let Some(rv) = ref_rows.get(&row.record_id) else {
            bail!(
                "{}: no reference intervals for record {:?}",
                ref_path.display(),
                row.record_id
            );
        };
        est.push(row.values);
        reference.push(*rv);
    }
    if est.is_empty() {
        bail!("{}: no data rows", est_path.display());
    }
    if est.len() < ref_rows.len() {
        eprintln!(
            "warning: {} reference record(s) have no estimate and were ignored",
            ref_rows.len() - est.len()
        );
    }

    let mut report: MetricReport = BTreeMap::new();
    report.insert("n_records".into(), serde_json::json!(est.len()));
    for (k, key) in INTERVAL_KEYS.iter().enumerate() {
        let e: Vec<f64> = est.iter().map(|v| v[k]).collect();
        let r: Vec<f64> = reference.iter().map(|v| v[k]).collect();
        let dev = abs_dev_percentiles(&e, &r)?;
        let ba = bland_altman_bands(&e, &r)?;
        write_bland_altman_csv(&ba, &out.join(format!("bland_altman_{key}.csv")))?;
        if svg {
            let mut p = Plot::new(
                &format!("{key}: estimate vs reference"),
                "pair mean",
                "difference (est - ref)",
            );
            p.scatter("records", ba.points.clone());
            p.hline(ba.median, "median");
            p.hline(ba.band95.0, "p2.5");
            p.hline(ba.band95.1, "p97.5");
            p.save(&out.join(format!("bland_altman_{key}.svg")))?;
        }
        report.insert(
            (*key).into(),
            serde_json::json!({
                "abs_dev_pct": {"p50": dev.p50, "p75": dev.p75, "p95": dev.p95},
                "median_diff": ba.median,
                "band95": [ba.band95.0, ba.band95.1],
            }),
        );
    }

    // Per-record gate: mean fractional difference over HR, PR, QRS, QT
    // (indices 0, 2, 3, 4 of the interval order; P duration is excluded).
    let mut passed = 0usize;
    for (e, r) in est.iter().zip(&reference) {
        let mut sum = 0.0;
        for k in [0usize, 2, 3, 4] {
            if r[k] == 0.0 {
                bail!("reference interval {} is zero", INTERVAL_KEYS[k]);
            }
            sum += (e[k] - r[k]).abs() / r[k];
        }
        if sum / 4.0 < 0.10 {
            passed += 1;
        }
    }
    report.insert(
        "gate_pass_fraction".into(),
        serde_json::json!(passed as f64 / est.len() as f64),
    );
    write_metric_report(&report, &out.join("metrics.json"))?;

    let mut log = RunLog::new("eval-agreement", seed, scale);
    log.set_path("est", est_path)
        .set_path("ref", ref_path)
        .set("svg", svg)
        .set("n_records", est.len() as u64);
    log.write(out)?;

    println!(
        "agreement over {} records: {:.1}% pass the <10% gate; metrics in {}",
        est.len(),
        100.0 * passed as f64 / est.len() as f64,
        out.join("metrics.json").display()
    );
    Ok(())
}

/// Per-class IoU of predicted label files against the manifest's labels.
pub fn iou(
    manifest_path: &Path,
    labels_dir: &Path,
    out: &Path,
    seed_flag: Option<u64>,
    scale: &str,
    mut ov: Overrides,
) -> Result<()> {
    let seed = seed_flag.or(ov.u64("seed")?).unwrap_or(0);
    ov.finish()?;

    let (entries, base) = read_manifest(manifest_path)?;
    if entries.is_empty() {
        bail!("{}: empty manifest", manifest_path.display());
    }

    let mut sums = [0.0f64; N_CLASSES];
    let mut counts = [0usize; N_CLASSES];
    let mut w = csv::Writer::from_path(out.join("iou_per_record.csv"))?;
    let mut header = vec!["record_id".to_string()];
    header.extend((0..N_CLASSES).map(|c| SegmentClass::from_code(c).unwrap().to_string()));
    w.write_record(&header)?;
    for entry in &entries {
        let truth = read_label_file(&entry.labels_path(&base))?;
        let pred_path = labels_dir.join(format!("{}.json", truth.record_id));
        let pred = read_label_file(&pred_path)?;
        let per_class = iou_per_class(&truth.labels, &pred.labels)?;
        let mut rec = vec![truth.record_id.clone()];
        for (c, v) in per_class.iter().enumerate() {
            match v {
                Some(v) => {
                    sums[c] += v;
                    counts[c] += 1;
                    rec.push(super::fmt_f64(*v));
                }
                None => rec.push(String::new()),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut report: MetricReport = BTreeMap::new();
    let mut means = BTreeMap::new();
    for c in 0..N_CLASSES {
        let name = SegmentClass::from_code(c).unwrap().to_string();
        let value = if counts[c] > 0 {
            serde_json::json!(sums[c] / counts[c] as f64)
        } else {
            serde_json::Value::Null
        };
        means.insert(name, value);
    }
    report.insert("iou_mean".into(), serde_json::json!(means));
    report.insert("n_records".into(), serde_json::json!(entries.len()));
    write_metric_report(&report, &out.join("metrics.json"))?;

    let mut log = RunLog::new("eval-iou", seed, scale);
    log.set_path("manifest", manifest_path)
        .set_path("labels", labels_dir)
        .set("n_records", entries.len() as u64);
    log.write(out)?;

    let summary: Vec<String> = (0..N_CLASSES)
        .filter(|&c| counts[c] > 0)
        .map(|c| {
            format!(
                "{} {:.1}",
                SegmentClass::from_code(c).unwrap(),
                sums[c] / counts[c] as f64
            )
        })
        .collect();
    println!("mean IoU over {} records: {}", entries.len(), summary.join(", "));
    Ok(())
}

/// ROC curve, AUROC with a DeLong confidence interval, and the operating
/// threshold meeting the requested sensitivity/specificity floors.
pub fn roc(
    scores_path: &Path,
    out: &Path,
    svg: bool,
    seed_flag: Option<u64>,
    scale: &str,
    mut ov: Overrides,
) -> Result<()> {
    let seed = seed_flag.or(ov.u64("seed")?).unwrap_or(0);
    let level = ov.f64("level")?.unwrap_or(0.95);
    let min_sens = ov.f64("min_sens")?.unwrap_or(0.80);
    let min_spec = ov.f64("min_spec")?.unwrap_or(0.90);
    ov.finish()?;

    let rows = read_scores_csv(scores_path)?;
    let mut scores = Vec::with_capacity(rows.len());
    let mut flags = Vec::with_capacity(rows.len());
    for row in &rows {
        let Some(t) = row.target else {
            bail!("{}: missing column \"target\"", scores_path.display());
        };
        if t != 0.0 && t != 1.0 {
            bail!(
                "{}: record {:?} has target {t}, expected 0 or 1",
                scores_path.display(),
                row.record_id
            );
        }
        scores.push(row.score);
        flags.push(t == 1.0);
    }

    let curve = auroc(&scores, &flags)?;
    let (auc, lo, hi) = delong_ci(&scores, &flags, level)?;
    let threshold = threshold_for(&curve, min_sens, min_spec);
    write_roc_csv(&curve, &out.join("roc.csv"))?;
    if svg {
        let pts: Vec<(f64, f64)> = curve
            .specificity
            .iter()
            .zip(&curve.sensitivity)
            .map(|(&sp, &se)| (1.0 - sp, se))
            .collect();
        let mut p = Plot::new(
            &format!("ROC (AUROC {auc:.3})"),
            "1 - specificity",
            "sensitivity",
        );
        p.line("model", pts);
        p.line("chance", vec![(0.0, 0.0), (1.0, 1.0)]);
        p.save(&out.join("roc.svg"))?;
    }

    let mut report: MetricReport = BTreeMap::new();
    report.insert("auroc".into(), serde_json::json!(auc));
    report.insert("ci".into(), serde_json::json!([lo, hi]));
    report.insert("ci_level".into(), serde_json::json!(level));
    report.insert("n_cases".into(), serde_json::json!(curve.n_cases));
    report.insert("n_controls".into(), serde_json::json!(curve.n_controls));
    report.insert("min_sens".into(), serde_json::json!(min_sens));
    report.insert("min_spec".into(), serde_json::json!(min_spec));
    report.insert(
        "threshold".into(),
        match threshold {
            Some(t) => serde_json::json!(t),
            None => serde_json::Value::Null,
        },
    );
    write_metric_report(&report, &out.join("metrics.json"))?;

    let mut log = RunLog::new("eval-roc", seed, scale);
    log.set_path("scores", scores_path)
        .set("level", level)
        .set("min_sens", min_sens)
        .set("min_spec", min_spec)
        .set("svg", svg);
    log.write(out)?;

    match threshold {
        Some(t) => println!(
            "AUROC {auc:.3} ({lo:.3}-{hi:.3}); threshold {t:?} meets sens ≥ {min_sens} and spec ≥ {min_spec}"
        ),
        None => println!(
            "AUROC {auc:.3} ({lo:.3}-{hi:.3}); no threshold meets sens ≥ {min_sens} and spec ≥ {min_spec}"
        ),
    }
    Ok(())
}
