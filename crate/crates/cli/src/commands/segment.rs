//! `ecg segment`: run the trained network + smoothing model over every
//! record of a manifest and write one predicted label file per record.

use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use ecg_core::hmm::{load_hmm, segment};
use ecg_core::io::{read_manifest, read_record_file, write_label_file, LabelFile};
use ecg_core::nnseg::load_model;

use crate::config::{Overrides, RunLog};

pub fn run(
    manifest_path: &Path,
    model_path: &Path,
    hmm_path: &Path,
    out: &Path,
    seed_flag: Option<u64>,
    scale: &str,
    mut ov: Overrides,
) -> Result<()> {
    let seed = seed_flag.or(ov.u64("seed")?).unwrap_or(0);
    ov.finish()?;

    let model = load_model(model_path)?;
    let hmm = load_hmm(hmm_path)?;
    let (entries, base) = read_manifest(manifest_path)?;
    if entries.is_empty() {
        bail!("{}: empty manifest", manifest_path.display());
    }

    let labels_dir = out.join("labels");
    fs::create_dir_all(&labels_dir)?;
    for entry in &entries {
        let record = read_record_file(&entry.record_path(&base))?;
        let labels = segment(&model, &hmm, &record)?;
        write_label_file(
            &LabelFile {
                record_id: record.record_id.clone(),
                start_ms: 0,
                labels,
            },
            &labels_dir.join(format!("{}.json", record.record_id)),
        )?;
    }

    let mut log = RunLog::new("segment", seed, scale);
    log.set_path("manifest", manifest_path)
        .set_path("model", model_path)
        .set_path("hmm", hmm_path)
        .set("n_records", entries.len() as u64);
    log.write(out)?;

    println!(
        "segmented {} records into {}",
        entries.len(),
        labels_dir.display()
    );
    Ok(())
}
