//! `ecg train-seg`: train the segmentation network on windows cut from a
//! labeled cohort, then estimate the smoothing model from the network's own
//! mistakes on that corpus.

use std::path::Path;

use anyhow::{bail, Result};
use ecg_core::hmm::{argmax_stream, save_hmm, HmmParams, DEFAULT_FLOOR};
use ecg_core::io::{read_label_file, read_manifest, read_record_file};
use ecg_core::nnseg::{save_model, train, TrainConfig, UNetConfig, UNetModel};
use ecg_core::resample::extract_window;
use ecg_core::rng::derive_seed;
use ecg_core::types::LabelSequence;

use crate::config::{Overrides, RunLog};

use super::fmt_f64;

pub fn run(
    manifest_path: &Path,
    out: &Path,
    seed_flag: Option<u64>,
    scale: &str,
    mut ov: Overrides,
) -> Result<()> {
    let (entries, base) = read_manifest(manifest_path)?;
    if entries.is_empty() {
        bail!("{}: empty manifest", manifest_path.display());
    }

    let (mut ucfg, mut tcfg) = match scale {
        "paper" => (UNetConfig::paper(), TrainConfig::paper()),
        _ => (UNetConfig::desk(), TrainConfig::desk()),
    };
    if let Some(v) = ov.usize("epochs")? {
        tcfg.epochs = v;
    }
    if let Some(v) = ov.f64("learning_rate")? {
        tcfg.learning_rate = v;
    }
    if let Some(v) = ov.usize("batch_size")? {
        tcfg.batch_size = v;
    }
    if let Some(v) = ov.f64("weight_decay")? {
        tcfg.weight_decay = v;
    }
    if let Some(v) = ov.f64("dropout_p")? {
        tcfg.dropout_p = v;
        ucfg.dropout_p = v;
    }
    let windows_per_record = ov.usize("windows_per_record")?.unwrap_or(2);
    let floor = ov.f64("floor")?.unwrap_or(DEFAULT_FLOOR);
    let seed = seed_flag.or(ov.u64("seed")?).unwrap_or(0);
    tcfg.seed = seed;
    ov.finish()?;
    if windows_per_record == 0 {
        bail!("windows_per_record must be ≥ 1");
    }

    // Cut training windows at evenly spread offsets within each record.
    let win = ucfg.input_len;
    let mut windows = Vec::new();
    let mut window_labels = Vec::new();
    let mut truth_seqs = Vec::new();
    let mut records = Vec::new();
    for entry in &entries {
        let record = read_record_file(&entry.record_path(&base))?;
        let labels = read_label_file(&entry.labels_path(&base))?.labels;
        let n = record.n_samples();
        if labels.len() != n {
            bail!(
                "record {}: {} samples but {} labels",
                record.record_id,
                n,
                labels.len()
            );
        }
        if n < win {
            bail!(
                "record {}: {} ms is shorter than the {win} ms training window",
                record.record_id,
                n
            );
        }
        let starts: Vec<usize> = if windows_per_record == 1 {
            vec![0]
        } else {
            let stride = (n - win) / (windows_per_record - 1);
            (0..windows_per_record).map(|j| j * stride).collect()
        };
        for start in starts {
            windows.push(extract_window(&record, start, win)?);
            window_labels.push(LabelSequence::new(
                labels.classes[start..start + win].to_vec(),
            ));
        }
        truth_seqs.push(labels);
        records.push(record);
    }

    println!(
        "training on {} windows of {win} ms from {} records",
        windows.len(),
        records.len()
    );
    let init = UNetModel::init(ucfg, derive_seed(seed, 1))?;
    let (model, trace) = train(&init, &windows, &window_labels, &tcfg)?;
    save_model(&model, &out.join("unet.json"))?;

    let mut w = csv::Writer::from_path(out.join("train_trace.csv"))?;
    w.write_record(["epoch", "loss"])?;
    for (i, loss) in trace.iter().enumerate() {
        w.write_record([i.to_string(), fmt_f64(*loss)])?;
    }
    w.flush()?;

    // Smoothing model: transitions from the truth sequences, emissions from
    // how the trained network actually mislabels this corpus.
    let predicted: Vec<LabelSequence> = records
        .iter()
        .map(|r| argmax_stream(&model, r))
        .collect::<ecg_core::Result<_>>()?;
    let hmm = HmmParams::estimate(&truth_seqs, &predicted, floor)?;
    save_hmm(&hmm, &out.join("hmm.json"))?;

    let mut log = RunLog::new("train-seg", seed, scale);
    log.set_path("manifest", manifest_path)
        .set("epochs", tcfg.epochs as u64)
        .set("learning_rate", tcfg.learning_rate)
        .set("batch_size", tcfg.batch_size as u64)
        .set("weight_decay", tcfg.weight_decay)
        .set("dropout_p", tcfg.dropout_p)
        .set("windows_per_record", windows_per_record as u64)
        .set("floor", floor)
        .set("n_windows", windows.len() as u64);
    log.write(out)?;

    let final_loss = trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs (final loss {final_loss:.4}); wrote unet.json and hmm.json to {}",
        trace.len(),
        out.display()
    );
    Ok(())
}
