//! File formats: ECG record JSON, label JSON, and cohort manifests.
//!
//! Records store voltages in millivolts. A record file may carry an optional
//! `"units"` field; anything other than `"mV"` is rejected at ingest. Label
//! files store the numeric class codes 0–5 in canonical
//! [`SegmentClass`](crate::types::SegmentClass) order. A cohort manifest is a
//! JSON array describing one record per entry, with file paths interpreted
//! relative to the manifest's own directory so a cohort folder can be moved
//! around freely.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EcgRecord, LabelSequence, LeadId, Sex};

#[derive(Serialize, Deserialize)]
struct RecordFile {
    record_id: String,
    patient_id: String,
    acquired_date: NaiveDate,
    sampling_hz: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    units: Option<String>,
    leads: BTreeMap<LeadId, Vec<f64>>,
}

/// Read and validate an ECG record file.
pub fn read_record_file(path: &Path) -> Result<EcgRecord> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let file: RecordFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if let Some(units) = &file.units {
        if units != "mV" {
            return Err(Error::invalid(format!(
                "{}: voltage units {units:?} not supported, expected \"mV\"",
                path.display()
            )));
        }
    }
    let record = EcgRecord {
        record_id: file.record_id,
        patient_id: file.patient_id,
        acquired_date: file.acquired_date,
        sampling_hz: file.sampling_hz,
        leads: file.leads,
    };
    record.validate()?;
    Ok(record)
}

/// Write an ECG record file (compact JSON). The record is validated first so
/// non-finite voltages can never reach disk.
pub fn write_record_file(record: &EcgRecord, path: &Path) -> Result<()> {
    record.validate()?;
    let file = RecordFile {
        record_id: record.record_id.clone(),
        patient_id: record.patient_id.clone(),
        acquired_date: record.acquired_date,
        sampling_hz: record.sampling_hz,
        units: None,
        leads: record.leads.clone(),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// A per-sample labeling stored on disk, tied to a record id and the
/// millisecond offset of its first sample within that record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFile {
    pub record_id: String,
    pub start_ms: i64,
    pub labels: LabelSequence,
}

#[derive(Serialize, Deserialize)]
struct LabelFileRaw {
    record_id: String,
    start_ms: i64,
    classes: Vec<u8>,
}

/// Read a label file, rejecting out-of-range class codes.
pub fn read_label_file(path: &Path) -> Result<LabelFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let raw: LabelFileRaw = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(LabelFile {
        record_id: raw.record_id,
        start_ms: raw.start_ms,
        labels: LabelSequence::from_codes(&raw.classes)?,
    })
}

/// Write a label file (compact JSON).
pub fn write_label_file(file: &LabelFile, path: &Path) -> Result<()> {
    let raw = LabelFileRaw {
        record_id: file.record_id.clone(),
        start_ms: file.start_ms,
        classes: file.labels.to_codes(),
    };
    fs::write(path, serde_json::to_string(&raw)?)?;
    Ok(())
}

/// One row of a cohort manifest: where the record and its ground-truth labels
/// live, plus the case/control assignment and matching demographics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Record file path, relative to the manifest's directory.
    pub record: String,
    /// Label file path, relative to the manifest's directory.
    pub labels: String,
    pub case_flag: bool,
    pub severity: f64,
    pub age: u32,
    pub sex: Sex,
    pub study_year: i32,
    pub patient_id: String,
}

impl ManifestEntry {
    /// Absolute (or base-joined) path of the record file.
    pub fn record_path(&self, base: &Path) -> PathBuf {
        base.join(&self.record)
    }

    /// Absolute (or base-joined) path of the label file.
    pub fn labels_path(&self, base: &Path) -> PathBuf {
        base.join(&self.labels)
    }
}

/// Read a cohort manifest. Returns the entries and the directory against
/// which their relative paths resolve.
pub fn read_manifest(path: &Path) -> Result<(Vec<ManifestEntry>, PathBuf)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    Ok((entries, base))
}

/// Write a cohort manifest (pretty JSON; the file is small and human-read).
pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(entries)?)?;
    Ok(())
}
