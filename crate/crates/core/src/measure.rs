//! Beat delineation, interval measurement, and the 725-component profile.
//!
//! A segmentation mask is turned into beats by grouping its runs; each
//! complete beat (P → PR → QRS → ST → T) yields the classic intervals
//! (heart rate, P duration, PR, QRS, QT) plus, per lead, three raw-voltage
//! morphology snippets — P-PR complex, QRS complex, ST-T complex — resized
//! to 20 points and averaged over beats. Five intervals + 3 segments ×
//! 12 leads × 20 points = 725 values per record.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EcgRecord, LabelSequence, LeadId, SegmentClass};

/// Total profile length: 5 intervals + 3 × 12 × 20 morphology values.
pub const PROFILE_LEN: usize = 725;
/// Points per resized morphology snippet.
pub const N_BINS: usize = 20;
/// Morphology block names in layout order.
pub const BLOCK_NAMES: [&str; 3] = ["P-PR", "QRS", "ST-T"];
/// Interval feature names, profile indices 0–4.
pub const INTERVAL_NAMES: [&str; 5] = [
    "Heart rate",
    "P-wave duration",
    "PR interval",
    "QRS duration",
    "QT interval",
];
/// Quality gate on [`interval_agreement`]: mean fractional difference must
/// stay strictly below this.
pub const AGREEMENT_GATE: f64 = 0.10;
/// Format stamp written into profile files and tables.
pub const PROFILE_LAYOUT_VERSION: &str = "ecg-profile-v1";

/// One cardiac cycle as half-open `[onset, offset)` millisecond spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Beat {
    pub p: (usize, usize),
    pub pr: (usize, usize),
    pub qrs: (usize, usize),
    pub st: (usize, usize),
    pub t: (usize, usize),
}

impl Beat {
    /// Beats are anchored at QRS onset.
    pub fn anchor(&self) -> usize {
        self.qrs.0
    }
}

/// All complete beats found in one record, in temporal order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BeatSegmentation {
    pub beats: Vec<Beat>,
}

/// Summary intervals averaged across beats (milliseconds, rate in bpm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    pub heart_rate: f64,
    pub p_dur: f64,
    pub pr_interval: f64,
    pub qrs_dur: f64,
    pub qt_interval: f64,
    pub n_beats_used: usize,
}

/// The 725-component per-record feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgProfile {
    pub values: Vec<f64>,
}

impl EcgProfile {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != PROFILE_LEN {
            return Err(Error::invalid(format!(
                "profile has {} values, expected {PROFILE_LEN}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("profile contains a non-finite value".into()));
        }
        Ok(())
    }
}

/// Group a label sequence's runs into beats, one candidate per QRS run. A
/// beat is complete when P, PR, QRS, ST, T runs appear in order within its
/// neighborhood (small stray runs between landmarks are tolerated).
/// Incomplete leading/trailing cycles simply produce no beat; an all-TP
/// record yields an empty result.
pub fn delineate_beats(labels: &LabelSequence) -> Result<BeatSegmentation> {
    if labels.is_empty() {
        return Err(Error::invalid("delineate_beats: empty label sequence"));
    }
    let mut spans = Vec::new();
    let mut at = 0usize;
    for (class, len) in labels.runs() {
        spans.push((class, at, at + len));
        at += len;
    }

    // One candidate beat per QRS run. The beat is complete when its
    // neighborhood — bounded by the adjacent QRS runs — contains P then PR
    // before the anchor and ST then T after it, in order. Stray runs between
    // those landmarks (duration-filter residue around window joins) do not
    // disqualify the beat; the nearest landmark of each kind is taken.
    let qrs_at: Vec<usize> = (0..spans.len())
        .filter(|&i| spans[i].0 == SegmentClass::Qrs)
        .collect();
    let mut beats = Vec::new();
    for (qi, &i) in qrs_at.iter().enumerate() {
        let lo = if qi > 0 { qrs_at[qi - 1] + 1 } else { 0 };
        let hi = qrs_at.get(qi + 1).copied().unwrap_or(spans.len());
        let pr = (lo..i).rfind(|&k| spans[k].0 == SegmentClass::Pr);
        let p = pr.and_then(|pr| (lo..pr).rfind(|&k| spans[k].0 == SegmentClass::P));
        let st = (i + 1..hi).find(|&k| spans[k].0 == SegmentClass::St);
        let t = st.and_then(|st| (st + 1..hi).find(|&k| spans[k].0 == SegmentClass::T));
        if let (Some(p), Some(pr), Some(st), Some(t)) = (p, pr, st, t) {
            let s = |k: usize| (spans[k].1, spans[k].2);
            beats.push(Beat {
                p: s(p),
                pr: s(pr),
                qrs: s(i),
                st: s(st),
                t: s(t),
            });
        }
    }
    Ok(BeatSegmentation { beats })
}

/// Average the per-beat intervals; heart rate comes from the mean successive
/// QRS-onset difference. Needs at least two beats.
pub fn compute_intervals(beats: &BeatSegmentation) -> Result<IntervalSet> {
    let n = beats.beats.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "interval computation needs ≥ 2 complete beats, found {n}"
        )));
    }
    let mean = |f: &dyn Fn(&Beat) -> f64| -> f64 {
        beats.beats.iter().map(|b| f(b)).sum::<f64>() / n as f64
    };
    let p_dur = mean(&|b| (b.p.1 - b.p.0) as f64);
    let pr_interval = mean(&|b| (b.qrs.0 - b.p.0) as f64);
    let qrs_dur = mean(&|b| (b.qrs.1 - b.qrs.0) as f64);
    let qt_interval = mean(&|b| (b.t.1 - b.qrs.0) as f64);
    let mut rr_sum = 0.0;
    for w in beats.beats.windows(2) {
        rr_sum += (w[1].anchor() - w[0].anchor()) as f64;
    }
    let heart_rate = 60_000.0 / (rr_sum / (n - 1) as f64);
    Ok(IntervalSet {
        heart_rate,
        p_dur,
        pr_interval,
        qrs_dur,
        qt_interval,
        n_beats_used: n,
    })
}

/// Mean fractional difference over {heart rate, PR, QRS, QT}, with `b` as
/// the reference. The quality gate passes when the result is strictly below
/// [`AGREEMENT_GATE`].
pub fn interval_agreement(a: &IntervalSet, b: &IntervalSet) -> Result<f64> {
    let pairs = [
        (a.heart_rate, b.heart_rate),
        (a.pr_interval, b.pr_interval),
        (a.qrs_dur, b.qrs_dur),
        (a.qt_interval, b.qt_interval),
    ];
    let mut sum = 0.0;
    for (x, r) in pairs {
        if r == 0.0 {
            return Err(Error::invalid("interval_agreement: zero reference value"));
        }
        sum += (x - r).abs() / r;
    }
    Ok(sum / pairs.len() as f64)
}

/// Linear interpolation of a series onto 20 equally spaced points spanning
/// `[first, last]` inclusive. A 20-sample input passes through unchanged.
pub fn resize_to_20(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "resize_to_20 needs ≥ 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len();
    let mut out = Vec::with_capacity(N_BINS);
    for k in 0..N_BINS {
        let pos = k as f64 * (n - 1) as f64 / (N_BINS - 1) as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let v = if frac == 0.0 || lo + 1 >= n {
            samples[lo]
        } else {
            samples[lo] + frac * (samples[lo + 1] - samples[lo])
        };
        out.push(v);
    }
    Ok(out)
}

/// Stable names for all 725 profile indices: the five interval names, then
/// `"<SEG> <LEAD> px<k>"` for each block × lead × point.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = INTERVAL_NAMES.iter().map(|s| s.to_string()).collect();
    for block in BLOCK_NAMES {
        for lead in LeadId::ALL {
            for k in 0..N_BINS {
                names.push(format!("{block} {lead} px{k}"));
            }
        }
    }
    names
}

/// Grouping used by binned variable-importance reports: the five intervals
/// stay singletons, and each block/lead's 20 points collapse into 5 groups of
/// 4 named `"<SEG> <LEAD> seg 0-4"` … `"seg 16-20"`. Returns `(name, member
/// profile indices)` in a stable order.
pub fn binned_groups() -> Vec<(String, Vec<usize>)> {
    let mut groups: Vec<(String, Vec<usize>)> = INTERVAL_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), vec![i]))
        .collect();
    let mut idx = INTERVAL_NAMES.len();
    for block in BLOCK_NAMES {
        for lead in LeadId::ALL {
            for g in 0..N_BINS / 4 {
                let name = format!("{block} {lead} seg {}-{}", 4 * g, 4 * (g + 1));
                groups.push((name, (idx..idx + 4).collect()));
                idx += 4;
            }
        }
    }
    groups
}

/// Build the full 725-component profile for one segmented record.
///
/// Index 0–4: intervals per [`compute_intervals`]. Index 5–724: for each
/// morphology block (P-PR = P onset → QRS onset, QRS = the QRS run, ST-T =
/// QRS offset → T offset), for each of the 12 leads, the 20-point resized
/// raw voltage averaged across all complete beats.
pub fn build_profile(record: &EcgRecord, labels: &LabelSequence) -> Result<EcgProfile> {
    if record.sampling_hz != 1000 {
        return Err(Error::invalid(format!(
            "build_profile requires a 1000 Hz record, got {} Hz",
            record.sampling_hz
        )));
    }
    if labels.len() != record.n_samples() {
        return Err(Error::Mismatch(format!(
            "label sequence of {} samples vs record of {}",
            labels.len(),
            record.n_samples()
        )));
    }
    let beats = delineate_beats(labels)?;
    let intervals = compute_intervals(&beats)?; // rejects < 2 beats, naming the count
    let n_beats = beats.beats.len() as f64;

    let mut values = vec![
        intervals.heart_rate,
        intervals.p_dur,
        intervals.pr_interval,
        intervals.qrs_dur,
        intervals.qt_interval,
    ];
    values.resize(PROFILE_LEN, 0.0);

    for (bi, span_of) in [
        (0usize, (|b: &Beat| (b.p.0, b.qrs.0)) as fn(&Beat) -> (usize, usize)),
        (1, |b: &Beat| b.qrs),
        (2, |b: &Beat| (b.qrs.1, b.t.1)),
    ] {
        for (li, lead) in LeadId::ALL.iter().enumerate() {
            let samples = record.lead(*lead);
            let mut acc = vec![0.0; N_BINS];
            for beat in &beats.beats {
                let (a, b) = span_of(beat);
                let resized = resize_to_20(&samples[a..b])?;
                for (dst, v) in acc.iter_mut().zip(&resized) {
                    *dst += v;
                }
            }
            let base = INTERVAL_NAMES.len() + (bi * LeadId::ALL.len() + li) * N_BINS;
            for (k, v) in acc.iter().enumerate() {
                values[base + k] = v / n_beats;
            }
        }
    }
    let profile = EcgProfile { values };
    profile.validate()?;
    Ok(profile)
}

/// On-disk profile for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    pub record_id: String,
    pub patient_id: String,
    pub acquired_date: chrono::NaiveDate,
    pub layout_version: String,
    pub values: Vec<f64>,
}

/// Write a single-record profile file (compact JSON).
pub fn save_profile(
    record: &EcgRecord,
    profile: &EcgProfile,
    path: &std::path::Path,
) -> Result<()> {
    profile.validate()?;
    let file = ProfileFile {
        record_id: record.record_id.clone(),
        patient_id: record.patient_id.clone(),
        acquired_date: record.acquired_date,
        layout_version: PROFILE_LAYOUT_VERSION.into(),
        values: profile.values.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Load a profile file, refusing layout-version mismatches.
pub fn load_profile(path: &std::path::Path) -> Result<ProfileFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let file: ProfileFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.layout_version != PROFILE_LAYOUT_VERSION {
        return Err(Error::Format(format!(
            "profile file has layout version {:?}, this build reads {:?}",
            file.layout_version, PROFILE_LAYOUT_VERSION
        )));
    }
    if file.values.len() != PROFILE_LEN {
        return Err(Error::Format(format!(
            "profile file has {} values, expected {PROFILE_LEN}",
            file.values.len()
        )));
    }
    Ok(file)
}

/// One row of the cohort profile table.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub record_id: String,
    pub patient_id: String,
    pub acquired_date: chrono::NaiveDate,
    pub values: Vec<f64>,
}

/// Write the cohort profile table: metadata columns, then one column per
/// feature name. The layout version is encoded as the first header cell
/// (`layout=<version>`) so readers can refuse incompatible tables.
pub fn write_profile_table(rows: &[ProfileRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        format!("layout={PROFILE_LAYOUT_VERSION}"),
        "record_id".into(),
        "patient_id".into(),
        "acquired_date".into(),
    ];
    header.extend(feature_names());
    w.write_record(&header)?;
    for (i, row) in rows.iter().enumerate() {
        if row.values.len() != PROFILE_LEN {
            return Err(Error::invalid(format!(
                "profile table row {i} has {} values, expected {PROFILE_LEN}",
                row.values.len()
            )));
        }
        let mut rec = vec![
            String::new(),
            row.record_id.clone(),
            row.patient_id.clone(),
            row.acquired_date.to_string(),
        ];
        rec.extend(row.values.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a cohort profile table written by [`write_profile_table`], checking
/// the layout stamp and feature-name header.
pub fn read_profile_table(path: &std::path::Path) -> Result<Vec<ProfileRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let stamp = header.get(0).unwrap_or_default();
    let expected = format!("layout={PROFILE_LAYOUT_VERSION}");
    if stamp != expected {
        return Err(Error::Format(format!(
            "profile table is stamped {stamp:?}, this build reads {expected:?}"
        )));
    }
    let names = feature_names();
    if header.len() != 4 + PROFILE_LEN
        || (0..PROFILE_LEN).any(|i| header.get(4 + i) != Some(names[i].as_str()))
    {
        return Err(Error::Format(
            "profile table header does not match the expected feature names".into(),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> Result<&str> {
            rec.get(j)
                .ok_or_else(|| Error::Format(format!("profile table row {i}: missing column {j}")))
        };
        let mut values = Vec::with_capacity(PROFILE_LEN);
        for j in 0..PROFILE_LEN {
            let txt = field(4 + j)?;
            values.push(txt.parse::<f64>().map_err(|e| {
                Error::Format(format!("profile table row {i}, column {}: {e}", 4 + j))
            })?);
        }
        rows.push(ProfileRow {
            record_id: field(1)?.to_string(),
            patient_id: field(2)?.to_string(),
            acquired_date: field(3)?
                .parse()
                .map_err(|e| Error::Format(format!("profile table row {i}: {e}")))?,
            values,
        });
    }
    Ok(rows)
}

/// Interval sets for a batch of records, keyed by record id — the flat map
/// shape used by agreement reports.
pub type IntervalTable = BTreeMap<String, IntervalSet>;
