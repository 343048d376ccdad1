//! `ecg profile`: measure intervals and build the 725-component profile for
//! every record of a manifest, reading either the manifest's own labels or a
//! directory of predicted label files.

use std::path::Path;

use anyhow::{bail, Result};
use ecg_core::io::{read_label_file, read_manifest, read_record_file};
use ecg_core::measure::{
    build_profile, compute_intervals, delineate_beats, write_profile_table, ProfileRow,
};

use crate::config::{Overrides, RunLog};

use super::{fmt_f64, INTERVAL_KEYS};

pub fn run(
    manifest_path: &Path,
    labels_dir: Option<&Path>,
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

    let mut profile_rows = Vec::with_capacity(entries.len());
    let mut interval_rows = Vec::with_capacity(entries.len());
    let mut n_skipped = 0usize;
    for entry in &entries {
        let record = read_record_file(&entry.record_path(&base))?;
        let label_path = match labels_dir {
            Some(dir) => dir.join(format!("{}.json", record.record_id)),
            None => entry.labels_path(&base),
        };
        let label_file = read_label_file(&label_path)?;
        if label_file.record_id != record.record_id {
            bail!(
                "{}: labels are for record {:?}, not {:?}",
                label_path.display(),
                label_file.record_id,
                record.record_id
            );
        }
        let labels = label_file.labels;
        // A record whose labeling yields too few complete beats is reported
        // and skipped, so one bad segmentation cannot sink a cohort run.
        let (profile, intervals) = match build_profile(&record, &labels)
            .and_then(|p| Ok((p, compute_intervals(&delineate_beats(&labels)?)?)))
        {
            Ok(pair) => pair,
            Err(e) => {
                eprintln!("warning: skipping record {}: {e}", record.record_id);
                n_skipped += 1;
                continue;
            }
        };
        profile_rows.push(ProfileRow {
            record_id: record.record_id.clone(),
            patient_id: record.patient_id.clone(),
            acquired_date: record.acquired_date,
            values: profile.values,
        });
        interval_rows.push((record.record_id.clone(), intervals));
    }
    if profile_rows.is_empty() {
        bail!("no record could be profiled ({n_skipped} skipped)");
    }

    write_profile_table(&profile_rows, &out.join("profiles.csv"))?;

    let mut w = csv::Writer::from_path(out.join("intervals.csv"))?;
    let mut header = vec!["record_id"];
    header.extend(INTERVAL_KEYS);
    header.push("n_beats_used");
    w.write_record(&header)?;
    for (id, iv) in &interval_rows {
        w.write_record([
            id.clone(),
            fmt_f64(iv.heart_rate),
            fmt_f64(iv.p_dur),
            fmt_f64(iv.pr_interval),
            fmt_f64(iv.qrs_dur),
            fmt_f64(iv.qt_interval),
            iv.n_beats_used.to_string(),
        ])?;
    }
    w.flush()?;

    let mut log = RunLog::new("profile", seed, scale);
    log.set_path("manifest", manifest_path)
        .set("n_records", entries.len() as u64)
        .set("n_skipped", n_skipped as u64)
        .set(
            "labels",
            labels_dir
                .map(|d| d.display().to_string())
                .unwrap_or_else(|| "manifest".into()),
        );
    log.write(out)?;

    println!(
        "profiled {} records into {} and {}",
        profile_rows.len(),
        out.join("profiles.csv").display(),
        out.join("intervals.csv").display()
    );
    Ok(())
}
