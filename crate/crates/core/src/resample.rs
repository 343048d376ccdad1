//! Linear resampling onto the 1 ms grid and window extraction.
//!
//! Everything downstream of ingest (network, HMM, measurement) assumes one
//! sample per millisecond, so 250 Hz and 500 Hz records are linearly
//! interpolated up to 1000 Hz first. Interpolation spans the same duration as
//! the source: a lead of `n` samples at rate `hz` covers `(n-1)/hz` seconds
//! and maps onto `(n-1)*1000/hz + 1` output samples, with both endpoints
//! preserved exactly.

use crate::error::{Error, Result};
use crate::types::{EcgRecord, SUPPORTED_SAMPLING_HZ};

/// Linearly interpolate a record onto a 1000 Hz grid.
///
/// Idempotent (and bit-identical) for records already at 1000 Hz. Grid points
/// that coincide with source samples copy the source value exactly rather
/// than recomputing it, so no floating-point drift is introduced at shared
/// points.
pub fn resample_to_1khz(record: &EcgRecord) -> Result<EcgRecord> {
    record.validate()?;
    if !SUPPORTED_SAMPLING_HZ.contains(&record.sampling_hz) {
        return Err(Error::invalid(format!(
            "cannot resample from {} Hz; supported rates are {:?}",
            record.sampling_hz, SUPPORTED_SAMPLING_HZ
        )));
    }
    if record.sampling_hz == 1000 {
        return Ok(record.clone());
    }
    // 250 Hz -> 4 output samples per input step, 500 Hz -> 2.
    let factor = (1000 / record.sampling_hz) as usize;
    let mut out = record.clone();
    out.sampling_hz = 1000;
    for series in out.leads.values_mut() {
        *series = upsample_linear(series, factor);
    }
    Ok(out)
}

/// Upsample one series by an integer factor with linear interpolation,
/// keeping the original samples on the output grid.
fn upsample_linear(x: &[f64], factor: usize) -> Vec<f64> {
    let n = x.len();
    if n == 1 {
        return x.to_vec();
    }
    let m = (n - 1) * factor + 1;
    let mut y = Vec::with_capacity(m);
    for j in 0..m {
        let i = j / factor;
        let r = j % factor;
        if r == 0 {
            y.push(x[i]);
        } else {
            let frac = r as f64 / factor as f64;
            y.push(x[i] + frac * (x[i + 1] - x[i]));
        }
    }
    y
}

/// Extract a `[start_ms, start_ms + len_ms)` window from a 1000 Hz record as
/// a 12-row matrix in canonical lead order; row `r`, column `t` is the
/// voltage of lead `r` at millisecond `start_ms + t`.
pub fn extract_window(record: &EcgRecord, start_ms: usize, len_ms: usize) -> Result<Vec<Vec<f64>>> {
    if record.sampling_hz != 1000 {
        return Err(Error::invalid(format!(
            "extract_window requires a 1000 Hz record, got {} Hz",
            record.sampling_hz
        )));
    }
    if len_ms == 0 {
        return Err(Error::invalid("extract_window: zero-length window"));
    }
    let n = record.n_samples();
    let end = start_ms
        .checked_add(len_ms)
        .ok_or_else(|| Error::invalid("extract_window: window bounds overflow"))?;
    if end > n {
        return Err(Error::invalid(format!(
            "window [{start_ms}, {end}) out of bounds for record of {n} ms"
        )));
    }
    Ok(record
        .leads
        .values()
        .map(|series| series[start_ms..end].to_vec())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LeadId;
    use chrono::NaiveDate;
    use std::collections::BTreeMap;

    fn record_with(hz: u32, make: impl Fn(usize) -> Vec<f64>) -> EcgRecord {
        let leads: BTreeMap<LeadId, Vec<f64>> = LeadId::ALL
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, make(i)))
            .collect();
        EcgRecord::new(
            "r",
            "p",
            NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            hz,
            leads,
        )
        .unwrap()
    }

    #[test]
    fn identity_at_1khz_is_bit_exact() {
        let rec = record_with(1000, |i| vec![0.1 * i as f64, -0.3, 0.7, 0.2]);
        let out = resample_to_1khz(&rec).unwrap();
        assert_eq!(rec, out);
    }

    #[test]
    fn midpoint_at_500hz() {
        let rec = record_with(500, |_| vec![0.0, 1.0]);
        let out = resample_to_1khz(&rec).unwrap();
        assert_eq!(out.sampling_hz, 1000);
        for lead in LeadId::ALL {
            assert_eq!(out.lead(lead), &[0.0, 0.5, 1.0]);
        }
    }

    #[test]
    fn quarter_points_at_250hz() {
        let rec = record_with(250, |_| vec![0.0, 2.0, 1.0]);
        let out = resample_to_1khz(&rec).unwrap();
        for lead in LeadId::ALL {
            assert_eq!(out.lead(lead), &[0.0, 0.5, 1.0, 1.5, 2.0, 1.75, 1.5, 1.25, 1.0]);
        }
    }

    #[test]
    fn resampling_matches_piecewise_linear_interpolant() {
        // Oracle: evaluate the piecewise-linear interpolant directly at every
        // output grid point and compare.
        let src: Vec<f64> = (0..40).map(|k| ((k * 37 % 17) as f64) * 0.13 - 1.0).collect();
        let rec = record_with(250, |_| src.clone());
        let out = resample_to_1khz(&rec).unwrap();
        let y = out.lead(LeadId::I);
        assert_eq!(y.len(), (src.len() - 1) * 4 + 1);
        for (j, &v) in y.iter().enumerate() {
            let t = j as f64 / 4.0;
            let i = (t.floor() as usize).min(src.len() - 2);
            let frac = t - i as f64;
            let want = src[i] + frac * (src[i + 1] - src[i]);
            assert!((v - want).abs() <= 1e-12, "j={j}: {v} vs {want}");
        }
        // Endpoints exact.
        assert_eq!(y[0], src[0]);
        assert_eq!(*y.last().unwrap(), *src.last().unwrap());
    }

    #[test]
    fn window_extraction_bounds_and_consistency() {
        let rec = record_with(1000, |i| (0..100).map(|t| (i * 100 + t) as f64).collect());
        let full = extract_window(&rec, 0, 100).unwrap();
        assert_eq!(full.len(), 12);
        assert_eq!(full[0].len(), 100);
        // Canonical lead order: row 0 is lead I, row 11 is V6.
        assert_eq!(full[0][0], 0.0);
        assert_eq!(full[11][0], 1100.0);

        // Adjacent windows re-concatenate to the original.
        let a = extract_window(&rec, 0, 40).unwrap();
        let b = extract_window(&rec, 40, 60).unwrap();
        for r in 0..12 {
            let mut joined = a[r].clone();
            joined.extend_from_slice(&b[r]);
            assert_eq!(joined, full[r]);
        }

        // Overlapping windows agree on the overlap.
        let w1 = extract_window(&rec, 10, 50).unwrap();
        let w2 = extract_window(&rec, 30, 50).unwrap();
        for r in 0..12 {
            assert_eq!(&w1[r][20..], &w2[r][..30]);
        }

        assert!(extract_window(&rec, 90, 20).is_err());
        assert!(extract_window(&rec, 0, 0).is_err());
        let rec500 = record_with(500, |_| vec![0.0; 10]);
        assert!(extract_window(&rec500, 0, 5).is_err());
    }
}
