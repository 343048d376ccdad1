//! Subcommand implementations and the small CSV contracts shared between
//! stages (interval tables and per-record score tables).

pub mod eval;
pub mod profile;
pub mod score;
pub mod segment;
pub mod synth;
pub mod track;
pub mod train_model;
pub mod train_seg;

use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;

/// Shortest round-trip decimal representation; parsing it back yields the
/// exact same f64, which keeps reruns byte-identical end to end.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Column order of an interval table. Matches the reporting order of the
/// profile's leading five entries.
pub(crate) const INTERVAL_KEYS: [&str; 5] =
    ["heart_rate", "p_dur", "pr_interval", "qrs_dur", "qt_interval"];

/// One row of an interval table.
pub(crate) struct IntervalRow {
    pub record_id: String,
    /// Ordered as [`INTERVAL_KEYS`].
    pub values: [f64; 5],
}

/// Read an interval table; columns are located by header name so extra
/// columns (e.g. `n_beats_used`) pass through harmlessly.
pub(crate) fn read_intervals_csv(path: &Path) -> Result<Vec<IntervalRow>> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow::anyhow!("{}: missing column {name:?}", path.display()))
    };
    let id_col = col("record_id")?;
    let mut value_cols = [0usize; 5];
    for (slot, key) in value_cols.iter_mut().zip(INTERVAL_KEYS) {
        *slot = col(key)?;
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut values = [0.0; 5];
        for (slot, &c) in values.iter_mut().zip(&value_cols) {
            let raw = rec.get(c).unwrap_or("");
            *slot = raw
                .parse::<f64>()
                .map_err(|_| anyhow::anyhow!("{}: bad number {raw:?}", path.display()))?;
        }
        rows.push(IntervalRow {
            record_id: rec.get(id_col).unwrap_or("").to_string(),
            values,
        });
    }
    Ok(rows)
}

/// One row of a per-record score table.
#[derive(Debug)]
pub(crate) struct ScoreRow {
    pub record_id: String,
    pub patient_id: Option<String>,
    pub acquired_date: Option<NaiveDate>,
    pub target: Option<f64>,
    pub score: f64,
}

/// Read a score table. `record_id` and `score` are mandatory; the other
/// columns are picked up when present and left `None` otherwise.
pub(crate) fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let Some(id_col) = find("record_id") else {
        bail!("{}: missing column \"record_id\"", path.display());
    };
    let Some(score_col) = find("score") else {
        bail!("{}: missing column \"score\"", path.display());
    };
    let patient_col = find("patient_id");
    let date_col = find("acquired_date");
    let target_col = find("target");

    let parse_f64 = |raw: &str| -> Result<f64> {
        raw.parse::<f64>()
            .map_err(|_| anyhow::anyhow!("{}: bad number {raw:?}", path.display()))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let date = match date_col.and_then(|c| rec.get(c)) {
            Some(raw) => Some(
                raw.parse::<NaiveDate>()
                    .map_err(|_| anyhow::anyhow!("{}: bad date {raw:?}", path.display()))?,
            ),
            None => None,
        };
        rows.push(ScoreRow {
            record_id: rec.get(id_col).unwrap_or("").to_string(),
            patient_id: patient_col.and_then(|c| rec.get(c)).map(str::to_string),
            acquired_date: date,
            target: match target_col.and_then(|c| rec.get(c)) {
                Some(raw) => Some(parse_f64(raw)?),
                None => None,
            },
            score: parse_f64(rec.get(score_col).unwrap_or(""))?,
        });
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_csv_by_header_with_extras() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("iv.csv");
        std::fs::write(
            &path,
            "record_id,n_beats_used,heart_rate,p_dur,pr_interval,qrs_dur,qt_interval\n\
             r1,9,60.0,90.0,140.0,95.0,355.0\n",
        )
        .unwrap();
        let rows = read_intervals_csv(&path).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].record_id, "r1");
        assert_eq!(rows[0].values, [60.0, 90.0, 140.0, 95.0, 355.0]);
    }

    #[test]
    fn score_csv_requires_id_and_score() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "record_id,score\nr1,0.25\n").unwrap();
        let rows = read_scores_csv(&path).unwrap();
        assert_eq!(rows[0].score, 0.25);
        assert!(rows[0].target.is_none());

        std::fs::write(&path, "record_id,value\nr1,0.25\n").unwrap();
        let err = read_scores_csv(&path).unwrap_err().to_string();
        assert!(err.contains("score"), "got: {err}");
    }
}
