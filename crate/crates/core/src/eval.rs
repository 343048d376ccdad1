//! Validation metrics: per-class IoU, deviation percentiles, Bland-Altman
//! bands, ROC/AUROC with DeLong confidence intervals, operating thresholds,
//! and per-patient-year score trajectories.
//!
//! One percentile convention is used throughout: linear interpolation
//! between order statistics (position `q·(n−1)`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::types::{LabelSequence, N_CLASSES};
#[cfg(test)]
use crate::types::SegmentClass;

/// Linear-interpolation quantile (`q` in [0, 1]) of an unsorted slice.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty slice"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level {q} outside [0, 1]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("quantile input contains a non-finite value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    Ok(if frac == 0.0 || lo + 1 == sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    })
}

/// Per-class IoU × 100 between two equal-length label sequences. A class
/// absent from both is undefined (`None`) and should be excluded from any
/// averaging, not counted as perfect.
pub fn iou_per_class(
    truth: &LabelSequence,
    pred: &LabelSequence,
) -> Result<[Option<f64>; N_CLASSES]> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::Mismatch(format!(
            "IoU needs equal nonempty sequences, got {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    let mut inter = [0usize; N_CLASSES];
    let mut union = [0usize; N_CLASSES];
    for (t, p) in truth.classes.iter().zip(&pred.classes) {
        if t == p {
            inter[t.code()] += 1;
            union[t.code()] += 1;
        } else {
            union[t.code()] += 1;
            union[p.code()] += 1;
        }
    }
    let mut out = [None; N_CLASSES];
    for c in 0..N_CLASSES {
        if union[c] > 0 {
            out[c] = Some(100.0 * inter[c] as f64 / union[c] as f64);
        }
    }
    Ok(out)
}

/// Percentiles of the absolute deviation as a percentage of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsDevPercentiles {
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

/// {p50, p75, p95} of `|est − ref| / ref × 100` over paired slices.
pub fn abs_dev_percentiles(estimates: &[f64], references: &[f64]) -> Result<AbsDevPercentiles> {
    if estimates.len() != references.len() || estimates.is_empty() {
        return Err(Error::Mismatch(format!(
            "deviation percentiles need equal nonempty slices, got {} vs {}",
            estimates.len(),
            references.len()
        )));
    }
    let mut devs = Vec::with_capacity(estimates.len());
    for (i, (e, r)) in estimates.iter().zip(references).enumerate() {
        if *r == 0.0 {
            return Err(Error::invalid(format!(
                "abs_dev_percentiles: zero reference at index {i}"
            )));
        }
        devs.push((e - r).abs() / r * 100.0);
    }
    Ok(AbsDevPercentiles {
        p50: quantile(&devs, 0.50)?,
        p75: quantile(&devs, 0.75)?,
        p95: quantile(&devs, 0.95)?,
    })
}

/// Bland-Altman agreement data: per-pair (mean, difference) points, the
/// median difference, and central 50/75/95% difference bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub points: Vec<(f64, f64)>,
    pub median: f64,
    pub band50: (f64, f64),
    pub band75: (f64, f64),
    pub band95: (f64, f64),
}

/// Differences (est − ref) against means, with bands at the {25, 75},
/// {12.5, 87.5}, and {2.5, 97.5} difference quantiles. Needs ≥ 4 pairs.
pub fn bland_altman_bands(estimates: &[f64], references: &[f64]) -> Result<BlandAltman> {
    if estimates.len() != references.len() || estimates.len() < 4 {
        return Err(Error::invalid(format!(
            "Bland-Altman needs ≥ 4 pairs, got {} and {}",
            estimates.len(),
            references.len()
        )));
    }
    let points: Vec<(f64, f64)> = estimates
        .iter()
        .zip(references)
        .map(|(e, r)| ((e + r) / 2.0, e - r))
        .collect();
    let diffs: Vec<f64> = points.iter().map(|&(_, d)| d).collect();
    let band = |lo: f64, hi: f64| -> Result<(f64, f64)> {
        Ok((quantile(&diffs, lo)?, quantile(&diffs, hi)?))
    };
    Ok(BlandAltman {
        median: quantile(&diffs, 0.5)?,
        band50: band(0.25, 0.75)?,
        band75: band(0.125, 0.875)?,
        band95: band(0.025, 0.975)?,
        points,
    })
}

/// ROC curve with the rank-based AUROC.
///
/// Thresholds ascend; a record is called a case when `score ≥ threshold`,
/// so sensitivity is non-increasing along the list and the endpoints
/// (sens 1, spec 0) and (sens 0, spec 1) are always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
    pub auroc: f64,
    pub n_cases: usize,
    pub n_controls: usize,
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Build the ROC curve and Mann-Whitney AUROC (ties contribute ½).
pub fn auroc(scores: &[f64], case_flags: &[bool]) -> Result<RocCurve> {
    if scores.len() != case_flags.len() || scores.is_empty() {
        return Err(Error::Mismatch(format!(
            "ROC needs equal nonempty slices, got {} scores vs {} flags",
            scores.len(),
            case_flags.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("ROC scores must be finite".into()));
    }
    let n_cases = case_flags.iter().filter(|&&f| f).count();
    let n_controls = scores.len() - n_cases;
    if n_cases == 0 || n_controls == 0 {
        return Err(Error::invalid(format!(
            "ROC needs both classes, got {n_cases} cases and {n_controls} controls"
        )));
    }

    let ranks = average_ranks(scores);
    let case_rank_sum: f64 = ranks
        .iter()
        .zip(case_flags)
        .filter(|&(_, &f)| f)
        .map(|(r, _)| r)
        .sum();
    let auc = (case_rank_sum - n_cases as f64 * (n_cases as f64 + 1.0) / 2.0)
        / (n_cases as f64 * n_controls as f64);

    // Candidate thresholds: midpoints between adjacent distinct scores plus
    // sentinels strictly below and above every score.
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = vec![distinct[0] - 1.0];
    for w in distinct.windows(2) {
        thresholds.push((w[0] + w[1]) / 2.0);
    }
    thresholds.push(distinct[distinct.len() - 1] + 1.0);

    let mut sensitivity = Vec::with_capacity(thresholds.len());
    let mut specificity = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut tn = 0usize;
        for (s, &f) in scores.iter().zip(case_flags) {
            if f && *s >= t {
                tp += 1;
            } else if !f && *s < t {
                tn += 1;
            }
        }
        sensitivity.push(tp as f64 / n_cases as f64);
        specificity.push(tn as f64 / n_controls as f64);
    }
    Ok(RocCurve {
        thresholds,
        sensitivity,
        specificity,
        auroc: auc,
        n_cases,
        n_controls,
    })
}

/// DeLong 95% (or `level`) confidence interval for the AUROC, from the
/// placement-value variance with a normal approximation, clipped to [0, 1].
///
/// A degenerate zero variance (perfect or null separation) collapses to a
/// zero-width interval at the point estimate, with a warning.
pub fn delong_ci(scores: &[f64], case_flags: &[bool], level: f64) -> Result<(f64, f64, f64)> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    let cases: Vec<f64> = scores
        .iter()
        .zip(case_flags)
        .filter(|&(_, &f)| f)
        .map(|(s, _)| *s)
        .collect();
    let controls: Vec<f64> = scores
        .iter()
        .zip(case_flags)
        .filter(|&(_, &f)| !f)
        .map(|(s, _)| *s)
        .collect();
    let (m, n) = (cases.len(), controls.len());
    if m < 2 || n < 2 {
        return Err(Error::invalid(format!(
            "DeLong CI needs ≥ 2 of each class, got {m} cases and {n} controls"
        )));
    }
    let psi = |x: f64, y: f64| -> f64 {
        if x > y {
            1.0
        } else if x == y {
            0.5
        } else {
            0.0
        }
    };
    // Placement values: each case's mean win rate over controls, and vice versa.
    let v10: Vec<f64> = cases
        .iter()
        .map(|&x| controls.iter().map(|&y| psi(x, y)).sum::<f64>() / n as f64)
        .collect();
    let v01: Vec<f64> = controls
        .iter()
        .map(|&y| cases.iter().map(|&x| psi(x, y)).sum::<f64>() / m as f64)
        .collect();
    let auc = v10.iter().sum::<f64>() / m as f64;
    let var_of = |v: &[f64], mean: f64| -> f64 {
        v.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64
    };
    let var = var_of(&v10, auc) / m as f64 + var_of(&v01, auc) / n as f64;
    if var == 0.0 {
        eprintln!("warning: DeLong variance is zero (AUROC {auc}); interval has zero width");
        return Ok((auc, auc, auc));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let half = z * var.sqrt();
    Ok((auc, (auc - half).max(0.0), (auc + half).min(1.0)))
}

/// Lowest threshold meeting both operating constraints, if any.
pub fn threshold_for(roc: &RocCurve, min_sens: f64, min_spec: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..roc.thresholds.len() {
        if roc.sensitivity[i] >= min_sens && roc.specificity[i] >= min_spec {
            best = Some(match best {
                Some(b) if b <= roc.thresholds[i] => b,
                _ => roc.thresholds[i],
            });
        }
    }
    best
}

/// One model score attached to a record's patient and acquisition date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub record_id: String,
    pub patient_id: String,
    pub acquired_date: chrono::NaiveDate,
    pub score: f64,
}

/// Per-patient year → median-score trajectories. Only patients with scores
/// in at least two distinct years are retained; each patient's series is
/// ordered by year.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackSeries {
    pub patients: BTreeMap<String, Vec<(i32, f64)>>,
}

/// Reduce per-record scores to per-(patient, year) medians.
pub fn track_scores(scores: &[ScoredRecord]) -> Result<TrackSeries> {
    if scores.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::Numeric("track_scores: non-finite score".into()));
    }
    use chrono::Datelike;
    let mut by_patient_year: BTreeMap<String, BTreeMap<i32, Vec<f64>>> = BTreeMap::new();
    for s in scores {
        by_patient_year
            .entry(s.patient_id.clone())
            .or_default()
            .entry(s.acquired_date.year())
            .or_default()
            .push(s.score);
    }
    let mut patients = BTreeMap::new();
    for (patient, years) in by_patient_year {
        if years.len() < 2 {
            continue;
        }
        let series = years
            .into_iter()
            .map(|(year, vals)| Ok((year, quantile(&vals, 0.5)?)))
            .collect::<Result<Vec<_>>>()?;
        patients.insert(patient, series);
    }
    Ok(TrackSeries { patients })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid(format!(
            "Spearman needs ≥ 2 paired values, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Numeric("Spearman undefined for constant input".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Flat metric report, serialized as a JSON object.
pub type MetricReport = BTreeMap<String, serde_json::Value>;

/// Write a metric report as pretty JSON (stable key order via BTreeMap).
pub fn write_metric_report(report: &MetricReport, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Plot-data CSV for a Bland-Altman panel; header `mean,diff`.
pub fn write_bland_altman_csv(ba: &BlandAltman, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mean", "diff"])?;
    for (m, d) in &ba.points {
        w.write_record([format!("{m:?}"), format!("{d:?}")])?;
    }
    w.flush()?;
    Ok(())
}

/// ROC curve CSV; header `threshold,sensitivity,specificity`.
pub fn write_roc_csv(roc: &RocCurve, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "sensitivity", "specificity"])?;
    for i in 0..roc.thresholds.len() {
        w.write_record([
            format!("{:?}", roc.thresholds[i]),
            format!("{:?}", roc.sensitivity[i]),
            format!("{:?}", roc.specificity[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trajectory CSV; header `patient_id,year,median_score`.
pub fn write_track_csv(series: &TrackSeries, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patient_id", "year", "median_score"])?;
    for (patient, points) in &series.patients {
        for (year, score) in points {
            w.write_record([patient.clone(), year.to_string(), format!("{score:?}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn quantile_matches_hand_values() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert!((quantile(&v, 0.90).unwrap() - 90.1).abs() < 1e-12);
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 100.0);
        // position 0.5·3 = 1.5 between sorted [1,2,3,4] → 2.5
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.5);
        assert!(quantile(&[], 0.5).is_err());
        assert!(quantile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn iou_hand_examples_and_symmetry() {
        let truth = LabelSequence::new(
            [vec![SegmentClass::Qrs; 10], vec![SegmentClass::Tp; 20]].concat(),
        );
        assert_eq!(
            iou_per_class(&truth, &truth).unwrap()[SegmentClass::Qrs.code()],
            Some(100.0)
        );

        // pred covers 8 of the 10 QRS steps plus 2 extra → 100·8/12
        let mut pred = truth.clone();
        pred.classes[0] = SegmentClass::Tp;
        pred.classes[1] = SegmentClass::Tp;
        pred.classes[10] = SegmentClass::Qrs;
        pred.classes[11] = SegmentClass::Qrs;
        let iou = iou_per_class(&truth, &pred).unwrap();
        assert!((iou[SegmentClass::Qrs.code()].unwrap() - 100.0 * 8.0 / 12.0).abs() < 1e-12);
        // absent from both → undefined
        assert_eq!(iou[SegmentClass::P.code()], None);
        // symmetric
        assert_eq!(iou, iou_per_class(&pred, &truth).unwrap());

        let short = LabelSequence::new(vec![SegmentClass::P; 5]);
        assert!(iou_per_class(&truth, &short).is_err());
    }

    #[test]
    fn abs_dev_examples_and_scale_invariance() {
        let r = vec![100.0, 200.0, 50.0];
        let d = abs_dev_percentiles(&r, &r).unwrap();
        assert_eq!((d.p50, d.p75, d.p95), (0.0, 0.0, 0.0));

        let d = abs_dev_percentiles(&[110.0], &[100.0]).unwrap();
        assert!((d.p50 - 10.0).abs() < 1e-12);
        assert!((d.p95 - 10.0).abs() < 1e-12);

        let mut rng = rng_from_seed(7);
        let refs: Vec<f64> = (0..40).map(|_| rng.random_range(50.0..150.0)).collect();
        let ests: Vec<f64> = refs.iter().map(|r| r * rng.random_range(0.9..1.1)).collect();
        let d1 = abs_dev_percentiles(&ests, &refs).unwrap();
        let scaled_e: Vec<f64> = ests.iter().map(|e| e * 3.0).collect();
        let scaled_r: Vec<f64> = refs.iter().map(|r| r * 3.0).collect();
        let d2 = abs_dev_percentiles(&scaled_e, &scaled_r).unwrap();
        assert!((d1.p50 - d2.p50).abs() < 1e-9);
        assert!((d1.p95 - d2.p95).abs() < 1e-9);

        let err = abs_dev_percentiles(&[1.0, 2.0], &[5.0, 0.0]).unwrap_err().to_string();
        assert!(err.contains("index 1"));
    }

    #[test]
    fn bland_altman_bands_nest() {
        let refs = vec![5.0; 8];
        let d = bland_altman_bands(&refs, &refs).unwrap();
        assert_eq!(d.median, 0.0);
        assert_eq!(d.band95, (0.0, 0.0));

        let mut rng = rng_from_seed(8);
        let refs: Vec<f64> = (0..60).map(|_| rng.random_range(80.0..120.0)).collect();
        let ests: Vec<f64> = refs.iter().map(|r| r + rng.random_range(-1.0..1.0)).collect();
        let ba = bland_altman_bands(&ests, &refs).unwrap();
        assert!(ba.band95.0 >= -1.0 && ba.band95.1 <= 1.0);
        assert!(ba.band50.0 >= ba.band75.0 && ba.band75.0 >= ba.band95.0);
        assert!(ba.band50.1 <= ba.band75.1 && ba.band75.1 <= ba.band95.1);

        assert!(bland_altman_bands(&[1.0; 3], &[1.0; 3]).is_err());
    }

    #[test]
    fn auroc_hand_cases() {
        let roc = auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(roc.auroc, 1.0);

        let roc = auroc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(roc.auroc, 0.5);

        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auroc_matches_pair_counting_oracle() {
        let mut rng = rng_from_seed(99);
        for _ in 0..200 {
            let n = rng.random_range(5..40);
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    // coarse grid so ties actually occur
                    (rng.random_range(0..20) as f64) / 10.0
                })
                .collect();
            let mut flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            flags[0] = true;
            flags[1] = false;
            let roc = auroc(&scores, &flags).unwrap();
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                if !flags[i] {
                    continue;
                }
                for j in 0..n {
                    if flags[j] {
                        continue;
                    }
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
            assert!((roc.auroc - wins / pairs).abs() <= 1e-12);
        }
    }

    #[test]
    fn auroc_invariant_under_monotone_transforms() {
        let mut rng = rng_from_seed(13);
        let scores: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
        let flags: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let base = auroc(&scores, &flags).unwrap().auroc;
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 11.0).collect();
        assert_eq!(auroc(&exp, &flags).unwrap().auroc, base);
        assert_eq!(auroc(&affine, &flags).unwrap().auroc, base);
    }

    #[test]
    fn roc_curve_shape() {
        let mut rng = rng_from_seed(21);
        let scores: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let flags: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        let roc = auroc(&scores, &flags).unwrap();
        // thresholds ascend, sensitivity never increases along them
        for w in roc.thresholds.windows(2) {
            assert!(w[0] < w[1]);
        }
        for w in roc.sensitivity.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert_eq!(roc.sensitivity[0], 1.0);
        assert_eq!(roc.specificity[0], 0.0);
        assert_eq!(*roc.sensitivity.last().unwrap(), 0.0);
        assert_eq!(*roc.specificity.last().unwrap(), 1.0);
    }

    #[test]
    fn delong_interval_brackets_and_matches_bootstrap() {
        let mut rng = rng_from_seed(55);
        let n = 200;
        let mut scores = Vec::with_capacity(n);
        let mut flags = Vec::with_capacity(n);
        for i in 0..n {
            let case = i % 3 == 0;
            let shift = if case { 1.0 } else { 0.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            scores.push(z + shift);
            flags.push(case);
        }
        let (auc, lo, hi) = delong_ci(&scores, &flags, 0.95).unwrap();
        assert!(lo <= auc && auc <= hi);
        assert!(lo >= 0.0 && hi <= 1.0);

        // Independent oracle: bootstrap the AUROC sampling distribution.
        let mut boots = Vec::with_capacity(2000);
        for _ in 0..2000 {
            let mut s = Vec::with_capacity(n);
            let mut f = Vec::with_capacity(n);
            for _ in 0..n {
                let k = rng.random_range(0..n);
                s.push(scores[k]);
                f.push(flags[k]);
            }
            if f.iter().any(|&x| x) && f.iter().any(|&x| !x) {
                boots.push(auroc(&s, &f).unwrap().auroc);
            }
        }
        let mean = boots.iter().sum::<f64>() / boots.len() as f64;
        let boot_var = boots.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>()
            / (boots.len() - 1) as f64;
        let delong_var = {
            let z = Normal::standard().inverse_cdf(0.975);
            let half = (hi - lo) / 2.0;
            (half / z) * (half / z)
        };
        assert!(
            (delong_var - boot_var).abs() / boot_var <= 0.25,
            "DeLong var {delong_var:.6} vs bootstrap {boot_var:.6}"
        );
    }

    #[test]
    fn delong_degenerate_variance_collapses() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let flags = [false, false, true, true];
        let (auc, lo, hi) = delong_ci(&scores, &flags, 0.95).unwrap();
        assert_eq!((auc, lo, hi), (1.0, 1.0, 1.0));
    }

    #[test]
    fn threshold_selection() {
        let scores = [0.1, 0.2, 0.3, 0.4, 0.8, 0.9];
        let flags = [false, false, false, false, true, true];
        let roc = auroc(&scores, &flags).unwrap();
        let t = threshold_for(&roc, 0.80, 0.90).unwrap();
        // lowest qualifying threshold is the first midpoint giving sens 1/spec 1
        assert_eq!(t, (0.4 + 0.8) / 2.0);
        let i = roc.thresholds.iter().position(|&x| x == t).unwrap();
        assert!(roc.sensitivity[i] >= 0.80 && roc.specificity[i] >= 0.90);

        let tied = auroc(&[0.5; 4], &[true, true, false, false]).unwrap();
        assert_eq!(threshold_for(&tied, 0.80, 0.90), None);
    }

    #[test]
    fn tracking_medians_and_exclusions() {
        let date = |y: i32, m: u32| chrono::NaiveDate::from_ymd_opt(y, m, 1).unwrap();
        let mk = |pid: &str, y: i32, m: u32, score: f64| ScoredRecord {
            record_id: format!("{pid}-{y}-{m}"),
            patient_id: pid.into(),
            acquired_date: date(y, m),
            score,
        };
        let records = vec![
            mk("a", 2015, 1, 0.2),
            mk("a", 2015, 5, 0.4),
            mk("a", 2015, 9, 0.9),
            mk("a", 2016, 2, 0.7),
            mk("b", 2015, 3, 0.5), // single year → excluded
        ];
        let series = track_scores(&records).unwrap();
        assert!(!series.patients.contains_key("b"));
        assert_eq!(series.patients["a"], vec![(2015, 0.4), (2016, 0.7)]);
    }

    #[test]
    fn spearman_hand_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 3.0, 1.0]).unwrap(), -1.0);
        // ranks y = [1,3,2] against [1,2,3] → ρ = 0.5
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 5.0, 4.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn csv_and_report_writers() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rng_from_seed(3);
        let refs: Vec<f64> = (0..10).map(|_| rng.random_range(50.0..100.0)).collect();
        let ests: Vec<f64> = refs.iter().map(|r| r + 1.0).collect();
        let ba = bland_altman_bands(&ests, &refs).unwrap();
        let path = dir.path().join("ba.csv");
        write_bland_altman_csv(&ba, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("mean,diff\n"));
        assert_eq!(text.lines().count(), 1 + ba.points.len());

        let mut report = MetricReport::new();
        report.insert("auroc".into(), serde_json::json!(0.93));
        let rp = dir.path().join("report.json");
        write_metric_report(&report, &rp).unwrap();
        let back: MetricReport =
            serde_json::from_str(&std::fs::read_to_string(&rp).unwrap()).unwrap();
        assert_eq!(back, report);
    }
}
