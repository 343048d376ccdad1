//! Domain types shared by every pipeline stage: leads, segment classes,
//! records, and label sequences.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling rates accepted at ingest, in Hz.
pub const SUPPORTED_SAMPLING_HZ: [u32; 3] = [250, 500, 1000];

/// The twelve standard ECG leads, in the canonical order used everywhere in
/// this crate: limb leads first, then augmented, then precordial.
///
/// The `Ord` derive follows declaration order, so iterating a
/// `BTreeMap<LeadId, _>` always yields leads in canonical order — this is what
/// keeps serialized lead maps byte-stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LeadId {
    I,
    II,
    III,
    #[serde(rename = "aVR")]
    AVR,
    #[serde(rename = "aVL")]
    AVL,
    #[serde(rename = "aVF")]
    AVF,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl LeadId {
    /// All leads in canonical order.
    pub const ALL: [LeadId; 12] = [
        LeadId::I,
        LeadId::II,
        LeadId::III,
        LeadId::AVR,
        LeadId::AVL,
        LeadId::AVF,
        LeadId::V1,
        LeadId::V2,
        LeadId::V3,
        LeadId::V4,
        LeadId::V5,
        LeadId::V6,
    ];

    /// Position of this lead in [`LeadId::ALL`].
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).unwrap()
    }

    /// Inverse of [`LeadId::index`].
    pub fn from_index(idx: usize) -> Result<LeadId> {
        Self::ALL
            .get(idx)
            .copied()
            .ok_or_else(|| Error::invalid(format!("lead index {idx} out of range 0..12")))
    }

    /// Conventional display name, e.g. `aVR` or `V3`.
    pub fn name(self) -> &'static str {
        match self {
            LeadId::I => "I",
            LeadId::II => "II",
            LeadId::III => "III",
            LeadId::AVR => "aVR",
            LeadId::AVL => "aVL",
            LeadId::AVF => "aVF",
            LeadId::V1 => "V1",
            LeadId::V2 => "V2",
            LeadId::V3 => "V3",
            LeadId::V4 => "V4",
            LeadId::V5 => "V5",
            LeadId::V6 => "V6",
        }
    }
}

impl fmt::Display for LeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LeadId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LeadId::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown lead name {s:?}")))
    }
}

/// The six beat segments a sample can belong to, in cyclic order.
///
/// A normal beat traverses `P → PR → QRS → ST → T → TP` and wraps back to `P`.
/// The numeric codes 0–5 (declaration order) are the on-disk representation in
/// label files and the class indices used by the network and the HMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SegmentClass {
    /// P wave: atrial depolarization.
    P,
    /// PR segment: end of P wave to QRS onset.
    Pr,
    /// QRS complex: ventricular depolarization.
    Qrs,
    /// ST segment: QRS offset to T-wave onset.
    St,
    /// T wave: ventricular repolarization.
    T,
    /// TP segment: electrical diastole between beats.
    Tp,
}

/// Number of segment classes.
pub const N_CLASSES: usize = 6;

impl SegmentClass {
    /// All classes in cyclic order.
    pub const ALL: [SegmentClass; N_CLASSES] = [
        SegmentClass::P,
        SegmentClass::Pr,
        SegmentClass::Qrs,
        SegmentClass::St,
        SegmentClass::T,
        SegmentClass::Tp,
    ];

    /// Numeric code 0–5.
    pub fn code(self) -> usize {
        self as usize
    }

    /// Inverse of [`SegmentClass::code`].
    pub fn from_code(code: usize) -> Result<SegmentClass> {
        Self::ALL
            .get(code)
            .copied()
            .ok_or_else(|| Error::invalid(format!("segment class code {code} out of range 0..6")))
    }

    /// The class that follows this one in the beat cycle (TP wraps to P).
    pub fn successor(self) -> SegmentClass {
        Self::ALL[(self.code() + 1) % N_CLASSES]
    }

    /// Short display name.
    pub fn name(self) -> &'static str {
        match self {
            SegmentClass::P => "P",
            SegmentClass::Pr => "PR",
            SegmentClass::Qrs => "QRS",
            SegmentClass::St => "ST",
            SegmentClass::T => "T",
            SegmentClass::Tp => "TP",
        }
    }
}

impl fmt::Display for SegmentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Patient sex as recorded for cohort matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::F => "F",
            Sex::M => "M",
        })
    }
}

/// A 12-lead ECG recording with per-lead voltage series in millivolts.
///
/// All twelve leads must be present and share a common length and sampling
/// rate. Most of the pipeline additionally requires records to be resampled to
/// 1000 Hz first (see [`crate::resample::resample_to_1khz`]), so that sample
/// index equals milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    /// Unique identifier of this recording.
    pub record_id: String,
    /// Identifier of the patient the recording belongs to; several records may
    /// share one patient.
    pub patient_id: String,
    /// Acquisition date (no time component).
    pub acquired_date: NaiveDate,
    /// Sampling rate in Hz; one of 250, 500, or 1000.
    pub sampling_hz: u32,
    /// Voltage series per lead, millivolts. `BTreeMap` keeps canonical lead
    /// order under serialization.
    pub leads: BTreeMap<LeadId, Vec<f64>>,
}

impl EcgRecord {
    /// Validating constructor.
    pub fn new(
        record_id: impl Into<String>,
        patient_id: impl Into<String>,
        acquired_date: NaiveDate,
        sampling_hz: u32,
        leads: BTreeMap<LeadId, Vec<f64>>,
    ) -> Result<Self> {
        let rec = EcgRecord {
            record_id: record_id.into(),
            patient_id: patient_id.into(),
            acquired_date,
            sampling_hz,
            leads,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Check the structural invariants: 12 leads, equal nonzero lengths,
    /// supported sampling rate, finite voltages.
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_SAMPLING_HZ.contains(&self.sampling_hz) {
            return Err(Error::invalid(format!(
                "record {}: sampling_hz {} not one of {:?}",
                self.record_id, self.sampling_hz, SUPPORTED_SAMPLING_HZ
            )));
        }
        if self.leads.len() != 12 {
            return Err(Error::invalid(format!(
                "record {}: expected 12 leads, found {}",
                self.record_id,
                self.leads.len()
            )));
        }
        let len = self
            .leads
            .values()
            .next()
            .map(|v| v.len())
            .unwrap_or(0);
        if len == 0 {
            return Err(Error::invalid(format!(
                "record {}: leads must be non-empty",
                self.record_id
            )));
        }
        for (lead, series) in &self.leads {
            if series.len() != len {
                return Err(Error::invalid(format!(
                    "record {}: lead {} has {} samples, expected {}",
                    self.record_id,
                    lead,
                    series.len(),
                    len
                )));
            }
            if let Some(i) = series.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "record {}: lead {} sample {} is not finite",
                    self.record_id, lead, i
                )));
            }
        }
        Ok(())
    }

    /// Number of samples per lead.
    pub fn n_samples(&self) -> usize {
        self.leads.values().next().map(|v| v.len()).unwrap_or(0)
    }

    /// Duration in milliseconds (requires a 1000 Hz record to be meaningful as
    /// sample count; for other rates this converts).
    pub fn duration_ms(&self) -> f64 {
        self.n_samples() as f64 * 1000.0 / self.sampling_hz as f64
    }

    /// Borrow one lead's samples.
    pub fn lead(&self, lead: LeadId) -> &[f64] {
        &self.leads[&lead]
    }
}

/// A per-sample segment labeling aligned with a 1000 Hz record: entry `t` is
/// the class of millisecond `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub classes: Vec<SegmentClass>,
}

impl LabelSequence {
    pub fn new(classes: Vec<SegmentClass>) -> Self {
        LabelSequence { classes }
    }

    /// Build from numeric codes, rejecting out-of-range values.
    pub fn from_codes(codes: &[u8]) -> Result<Self> {
        let classes = codes
            .iter()
            .map(|&c| SegmentClass::from_code(c as usize))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelSequence { classes })
    }

    /// Numeric codes 0–5, the on-disk representation.
    pub fn to_codes(&self) -> Vec<u8> {
        self.classes.iter().map(|c| c.code() as u8).collect()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Maximal runs of constant class, as `(class, run_length)` in order.
    pub fn runs(&self) -> Vec<(SegmentClass, usize)> {
        let mut runs = Vec::new();
        for &c in &self.classes {
            match runs.last_mut() {
                Some((prev, n)) if *prev == c => *n += 1,
                _ => runs.push((c, 1)),
            }
        }
        runs
    }

    /// Fraction of positions where the two sequences agree. Errors on length
    /// mismatch or empty input.
    pub fn token_accuracy(&self, other: &LabelSequence) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Mismatch(format!(
                "label sequences have lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        if self.is_empty() {
            return Err(Error::invalid("token accuracy of empty sequences"));
        }
        let hits = self
            .classes
            .iter()
            .zip(&other.classes)
            .filter(|(a, b)| a == b)
            .count();
        Ok(hits as f64 / self.len() as f64)
    }
}
