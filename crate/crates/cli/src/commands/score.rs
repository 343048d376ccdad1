//! `ecg score`: apply a trained gradient-boosted model to a profile table and
//! write one score per record. This is how a fitted detection model is taken
//! to records that were not part of its training cohort, for example a
//! longitudinal series that will be handed to `ecg track`.

use std::path::Path;

use anyhow::{Context, Result};
use ecg_core::gbm::load_gbm;
use ecg_core::measure::read_profile_table;

use crate::config::{Overrides, RunLog};

use super::fmt_f64;

pub fn run(
    model_path: &Path,
    profiles_path: &Path,
    out: &Path,
    seed_flag: Option<u64>,
    scale: &str,
    mut ov: Overrides,
) -> Result<()> {
    let seed = seed_flag.or(ov.u64("seed")?).unwrap_or(0);
    ov.finish()?;

    let model = load_gbm(model_path)?;
    let profile_rows = read_profile_table(profiles_path)?;
    let x: Vec<Vec<f64>> = profile_rows.iter().map(|r| r.values.clone()).collect();
    let scores = model
        .predict(&x)
        .with_context(|| format!("scoring {}", profiles_path.display()))?;

    let mut w = csv::Writer::from_path(out.join("scores.csv"))?;
    w.write_record(["record_id", "patient_id", "acquired_date", "score"])?;
    for (row, score) in profile_rows.iter().zip(&scores) {
        w.write_record([
            row.record_id.clone(),
            row.patient_id.clone(),
            row.acquired_date.to_string(),
            fmt_f64(*score),
        ])?;
    }
    w.flush()?;

    let mut log = RunLog::new("score", seed, scale);
    log.set_path("model", model_path)
        .set_path("profiles", profiles_path)
        .set("n_records", profile_rows.len() as u64);
    log.write(out)?;

    println!(
        "scored {} records into {}",
        profile_rows.len(),
        out.join("scores.csv").display()
    );
    Ok(())
}
