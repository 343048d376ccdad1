//! `ecg track`: collapse per-record scores to per-patient-year medians and
//! report each retained patient's year-to-score rank correlation.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};
use ecg_core::eval::{
    spearman, track_scores, write_metric_report, write_track_csv, MetricReport, ScoredRecord,
};
use ecg_core::plot::Plot;

use crate::config::{Overrides, RunLog};

pub fn run(
    scores_path: &Path,
    out: &Path,
    svg: bool,
    seed_flag: Option<u64>,
    scale: &str,
    mut ov: Overrides,
) -> Result<()> {
    let seed = seed_flag.or(ov.u64("seed")?).unwrap_or(0);
    ov.finish()?;

    let rows = super::read_scores_csv(scores_path)?;
    let mut scored = Vec::with_capacity(rows.len());
    for row in &rows {
        let (Some(patient_id), Some(date)) = (&row.patient_id, row.acquired_date) else {
            bail!(
                "{}: tracking needs patient_id and acquired_date columns",
                scores_path.display()
            );
        };
        scored.push(ScoredRecord {
            record_id: row.record_id.clone(),
            patient_id: patient_id.clone(),
            acquired_date: date,
            score: row.score,
        });
    }

    let series = track_scores(&scored)?;
    write_track_csv(&series, &out.join("trajectories.csv"))?;

    let mut rhos: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    let mut n_monotone = 0usize;
    for (patient, points) in &series.patients {
        let years: Vec<f64> = points.iter().map(|(y, _)| *y as f64).collect();
        let medians: Vec<f64> = points.iter().map(|(_, s)| *s).collect();
        match spearman(&years, &medians) {
            Ok(rho) => {
                if rho >= 0.8 {
                    n_monotone += 1;
                }
                rhos.insert(patient.clone(), serde_json::json!(rho));
            }
            // A flat series has no rank ordering to correlate; report null.
            Err(_) => {
                rhos.insert(patient.clone(), serde_json::Value::Null);
            }
        }
    }

    let n_patients = series.patients.len();
    let excluded = scored
        .iter()
        .map(|s| &s.patient_id)
        .collect::<std::collections::BTreeSet<_>>()
        .len()
        - n_patients;
    let mut report: MetricReport = BTreeMap::new();
    report.insert("n_patients".into(), serde_json::json!(n_patients));
    report.insert("n_excluded_single_year".into(), serde_json::json!(excluded));
    report.insert(
        "frac_spearman_ge_0.8".into(),
        serde_json::json!(if n_patients > 0 {
            n_monotone as f64 / n_patients as f64
        } else {
            0.0
        }),
    );
    report.insert("spearman".into(), serde_json::json!(rhos));
    write_metric_report(&report, &out.join("metrics.json"))?;

    if svg && n_patients > 0 {
        let mut p = Plot::new("per-patient score trajectories", "year", "median score");
        for (patient, points) in &series.patients {
            let pts: Vec<(f64, f64)> = points.iter().map(|(y, s)| (*y as f64, *s)).collect();
            let label = if n_patients <= 8 { patient.as_str() } else { "" };
            p.line(label, pts);
        }
        p.save(&out.join("trajectories.svg"))?;
    }

    let mut log = RunLog::new("track", seed, scale);
    log.set_path("scores", scores_path)
        .set("svg", svg)
        .set("n_patients", n_patients as u64);
    log.write(out)?;

    println!(
        "tracked {n_patients} patients ({excluded} single-year excluded); \
         {n_monotone} have Spearman ≥ 0.8"
    );
    Ok(())
}
