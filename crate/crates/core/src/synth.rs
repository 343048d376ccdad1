//! Parametric 12-lead ECG generator with exact ground-truth labels.
//!
//! Each beat is assembled from per-segment templates on a continuous time
//! axis: Gaussian bumps for the P and T waves, a piecewise-linear Q–R–S
//! polyline (optionally with an R′ deflection in V1), and flat PR/ST/TP
//! baseline, plus white noise. Because the segment boundaries are laid down
//! first and the waveform is rendered from them, labels and voltages are
//! aligned by construction.
//!
//! Records always start inside a TP segment (half the baseline TP length), so
//! windows never open mid-QRS. Beat-to-beat variability comes from jittering
//! only the TP duration; the waves themselves keep their commanded durations.
//!
//! Three planted "disease" signatures scale linearly with a severity in
//! [0, 1], chosen so downstream models have a known right answer:
//!
//! * [`DiseaseKind::RightHeart`] — an R′ lobe in V1 plus a sign-flipped
//!   terminal QRS deflection in lead I (rightward-axis analog).
//! * [`DiseaseKind::Hypertrophy`] — longer QRS and taller R waves everywhere.
//! * [`DiseaseKind::LowVoltage`] — globally blunted QRS amplitudes.
//!
//! Severity 0 is exactly the control distribution.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::types::{EcgRecord, LabelSequence, LeadId, SegmentClass, Sex};

/// Per-lead wave amplitudes in millivolts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveAmps {
    pub p_amp: f64,
    pub q_amp: f64,
    pub r_amp: f64,
    pub s_amp: f64,
    pub t_amp: f64,
}

impl WaveAmps {
    const fn new(p: f64, q: f64, r: f64, s: f64, t: f64) -> Self {
        WaveAmps {
            p_amp: p,
            q_amp: q,
            r_amp: r,
            s_amp: s,
            t_amp: t,
        }
    }

    fn all_finite(&self) -> bool {
        [self.p_amp, self.q_amp, self.r_amp, self.s_amp, self.t_amp]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Everything that defines one synthetic beat morphology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatParams {
    pub heart_rate_bpm: f64,
    /// Wave/segment durations in milliseconds.
    pub p_dur_ms: f64,
    pub pr_seg_ms: f64,
    pub qrs_ms: f64,
    pub st_ms: f64,
    pub t_ms: f64,
    /// Amplitude table, all 12 leads present.
    pub amps: BTreeMap<LeadId, WaveAmps>,
    /// Height of the extra R′ lobe rendered in V1 (0 disables it).
    pub rprime_v1_amp: f64,
    /// White-noise standard deviation in mV.
    pub noise_sd: f64,
    /// Per-beat TP-duration jitter: TP is scaled by `1 + jitter_frac * u`,
    /// `u ~ U[-1, 1]`. Must lie in [0, 0.2].
    pub jitter_frac: f64,
}

/// Where wave peaks sit inside their segment, as a fraction of the segment
/// duration. Exposed so tests can compare measured peak positions against the
/// generator's analytic ground truth.
pub const QRS_R_PEAK_FRAC: f64 = 0.40;
/// R-peak fraction when the V1 polyline includes an R′ lobe.
pub const QRS_R_PEAK_FRAC_RPRIME: f64 = 0.28;
/// R′-peak fraction within the QRS (lands in resize bin ~11 of 0..20).
pub const QRS_RPRIME_PEAK_FRAC: f64 = 0.58;

impl BeatParams {
    /// A plain sinus-rhythm parameter set with integer-millisecond durations,
    /// handy for tests that want exact label-run lengths.
    pub fn normal() -> Self {
        BeatParams {
            heart_rate_bpm: 60.0,
            p_dur_ms: 90.0,
            pr_seg_ms: 50.0,
            qrs_ms: 95.0,
            st_ms: 100.0,
            t_ms: 160.0,
            amps: default_amplitudes(),
            rprime_v1_amp: 0.0,
            noise_sd: 0.0,
            jitter_frac: 0.0,
        }
    }

    /// RR interval in milliseconds implied by the heart rate.
    pub fn rr_ms(&self) -> f64 {
        60_000.0 / self.heart_rate_bpm
    }

    /// Sum of the five wave/segment durations (everything except TP).
    pub fn wave_sum_ms(&self) -> f64 {
        self.p_dur_ms + self.pr_seg_ms + self.qrs_ms + self.st_ms + self.t_ms
    }

    /// Baseline TP duration: whatever the RR interval leaves over.
    pub fn tp_base_ms(&self) -> f64 {
        self.rr_ms() - self.wave_sum_ms()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.heart_rate_bpm.is_finite() && self.heart_rate_bpm > 0.0) {
            return Err(Error::invalid("heart_rate_bpm must be positive"));
        }
        for (name, v) in [
            ("p_dur_ms", self.p_dur_ms),
            ("pr_seg_ms", self.pr_seg_ms),
            ("qrs_ms", self.qrs_ms),
            ("st_ms", self.st_ms),
            ("t_ms", self.t_ms),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.wave_sum_ms() >= self.rr_ms() {
            return Err(Error::invalid(format!(
                "segment durations sum to {:.1} ms, which does not fit the RR interval {:.1} ms",
                self.wave_sum_ms(),
                self.rr_ms()
            )));
        }
        if !(0.0..=0.2).contains(&self.jitter_frac) {
            return Err(Error::invalid(format!(
                "jitter_frac must lie in [0, 0.2], got {}",
                self.jitter_frac
            )));
        }
        // Even the most compressed jittered TP must still be at least ~1 ms,
        // otherwise the cyclic label structure would skip a state.
        if self.tp_base_ms() * (1.0 - self.jitter_frac) < 1.5 {
            return Err(Error::invalid(format!(
                "TP segment of {:.2} ms (after jitter) is too short; lower the heart rate or durations",
                self.tp_base_ms() * (1.0 - self.jitter_frac)
            )));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd must be ≥ 0"));
        }
        if !(self.rprime_v1_amp.is_finite() && self.rprime_v1_amp >= 0.0) {
            return Err(Error::invalid("rprime_v1_amp must be ≥ 0"));
        }
        if self.amps.len() != 12 {
            return Err(Error::invalid(format!(
                "amplitude table must cover all 12 leads, found {}",
                self.amps.len()
            )));
        }
        if let Some((lead, _)) = self.amps.iter().find(|(_, a)| !a.all_finite()) {
            return Err(Error::invalid(format!("non-finite amplitude for lead {lead}")));
        }
        Ok(())
    }
}

/// Typical adult sinus-rhythm amplitudes (mV) per lead.
pub fn default_amplitudes() -> BTreeMap<LeadId, WaveAmps> {
    use LeadId::*;
    [
        (I, WaveAmps::new(0.08, -0.05, 0.70, -0.15, 0.25)),
        (II, WaveAmps::new(0.12, -0.06, 1.00, -0.20, 0.30)),
        (III, WaveAmps::new(0.05, -0.04, 0.50, -0.15, 0.12)),
        (AVR, WaveAmps::new(-0.10, 0.04, -0.60, 0.10, -0.25)),
        (AVL, WaveAmps::new(0.04, -0.03, 0.35, -0.20, 0.10)),
        (AVF, WaveAmps::new(0.09, -0.05, 0.75, -0.18, 0.22)),
        (V1, WaveAmps::new(0.05, -0.03, 0.30, -0.85, -0.10)),
        (V2, WaveAmps::new(0.06, -0.03, 0.45, -0.95, 0.35)),
        (V3, WaveAmps::new(0.06, -0.04, 0.70, -0.70, 0.45)),
        (V4, WaveAmps::new(0.07, -0.05, 1.10, -0.45, 0.40)),
        (V5, WaveAmps::new(0.08, -0.06, 1.30, -0.30, 0.35)),
        (V6, WaveAmps::new(0.08, -0.06, 1.20, -0.20, 0.30)),
    ]
    .into_iter()
    .collect()
}

/// One segment instance on the continuous time axis, `[start, end)` in ms.
struct Seg {
    class: SegmentClass,
    start: f64,
    end: f64,
}

/// Lay down the segment schedule for `duration_ms` of signal.
fn build_schedule(params: &BeatParams, duration_ms: usize, rng: &mut ChaCha8Rng) -> Vec<Seg> {
    let tp_base = params.tp_base_ms();
    let mut segs = Vec::new();
    let mut pos = 0.0;
    let push = |segs: &mut Vec<Seg>, pos: &mut f64, class, dur: f64| {
        segs.push(Seg {
            class,
            start: *pos,
            end: *pos + dur,
        });
        *pos += dur;
    };
    // Opening half-TP so the first window never starts mid-beat.
    push(&mut segs, &mut pos, SegmentClass::Tp, tp_base / 2.0);
    while pos < duration_ms as f64 {
        push(&mut segs, &mut pos, SegmentClass::P, params.p_dur_ms);
        push(&mut segs, &mut pos, SegmentClass::Pr, params.pr_seg_ms);
        push(&mut segs, &mut pos, SegmentClass::Qrs, params.qrs_ms);
        push(&mut segs, &mut pos, SegmentClass::St, params.st_ms);
        push(&mut segs, &mut pos, SegmentClass::T, params.t_ms);
        let jitter = if params.jitter_frac > 0.0 {
            params.jitter_frac * rng.random_range(-1.0..1.0)
        } else {
            0.0
        };
        push(&mut segs, &mut pos, SegmentClass::Tp, tp_base * (1.0 + jitter));
    }
    segs
}

/// QRS polyline vertices as (fraction of QRS duration, amplitude scale). The
/// amplitude scale multiplies nothing — the vertex amplitudes are looked up
/// per lead — so this returns concrete (frac, mV) pairs.
fn qrs_vertices(a: &WaveAmps, rprime: f64) -> Vec<(f64, f64)> {
    if rprime > 0.0 {
        vec![
            (0.0, 0.0),
            (0.10, a.q_amp),
            (QRS_R_PEAK_FRAC_RPRIME, a.r_amp),
            (0.44, a.s_amp),
            (QRS_RPRIME_PEAK_FRAC, rprime),
            (0.80, 0.0),
            (1.0, 0.0),
        ]
    } else {
        vec![
            (0.0, 0.0),
            (0.15, a.q_amp),
            (QRS_R_PEAK_FRAC, a.r_amp),
            (0.70, a.s_amp),
            (1.0, 0.0),
        ]
    }
}

fn polyline_value(vertices: &[(f64, f64)], u: f64) -> f64 {
    for pair in vertices.windows(2) {
        let (u0, v0) = pair[0];
        let (u1, v1) = pair[1];
        if u >= u0 && u <= u1 {
            if u1 == u0 {
                return v0;
            }
            return v0 + (u - u0) / (u1 - u0) * (v1 - v0);
        }
    }
    0.0
}

/// Render one segment's wave into `out[ceil(start) .. ceil(end))`.
fn render_segment(out: &mut [f64], seg: &Seg, amps: &WaveAmps, lead: LeadId, rprime: f64) {
    let dur = seg.end - seg.start;
    let lo = seg.start.ceil().max(0.0) as usize;
    let hi = (seg.end.ceil() as usize).min(out.len());
    match seg.class {
        SegmentClass::P | SegmentClass::T => {
            let amp = if seg.class == SegmentClass::P {
                amps.p_amp
            } else {
                amps.t_amp
            };
            let center = seg.start + dur / 2.0;
            let sigma = dur / 6.0;
            for t in lo..hi {
                let z = (t as f64 - center) / sigma;
                out[t] += amp * (-0.5 * z * z).exp();
            }
        }
        SegmentClass::Qrs => {
            let rp = if lead == LeadId::V1 { rprime } else { 0.0 };
            let vertices = qrs_vertices(amps, rp);
            for t in lo..hi {
                let u = (t as f64 - seg.start) / dur;
                out[t] += polyline_value(&vertices, u);
            }
        }
        _ => {} // PR, ST, TP are isoelectric baseline.
    }
}

/// Generate one synthetic record at 1000 Hz together with its ground-truth
/// per-millisecond labels. Deterministic in `(params, duration_ms, seed)`.
pub fn generate_record(
    params: &BeatParams,
    duration_ms: usize,
    seed: u64,
) -> Result<(EcgRecord, LabelSequence)> {
    params.validate()?;
    if duration_ms == 0 {
        return Err(Error::invalid("duration_ms must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let schedule = build_schedule(params, duration_ms, &mut rng);

    // Labels: every millisecond is covered because segments are contiguous
    // from 0 and the schedule overshoots the requested duration.
    let mut classes = vec![SegmentClass::Tp; duration_ms];
    for seg in &schedule {
        let lo = seg.start.ceil().max(0.0) as usize;
        let hi = (seg.end.ceil() as usize).min(duration_ms);
        for c in classes.iter_mut().take(hi).skip(lo) {
            *c = seg.class;
        }
    }

    // Waves, then noise, in canonical lead order.
    let mut leads: BTreeMap<LeadId, Vec<f64>> = BTreeMap::new();
    for lead in LeadId::ALL {
        let amps = &params.amps[&lead];
        let mut series = vec![0.0; duration_ms];
        for seg in &schedule {
            render_segment(&mut series, seg, amps, lead, params.rprime_v1_amp);
        }
        leads.insert(lead, series);
    }
    if params.noise_sd > 0.0 {
        let normal = Normal::new(0.0, params.noise_sd)
            .map_err(|e| Error::invalid(format!("noise_sd: {e}")))?;
        for series in leads.values_mut() {
            for v in series.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }

    let record = EcgRecord::new(
        format!("synth-{seed:016x}"),
        "synth",
        chrono::NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
        1000,
        leads,
    )?;
    Ok((record, LabelSequence::new(classes)))
}

/// The five interval values implied directly by the beat parameters, in the
/// reporting order [heart rate, P duration, PR interval, QRS duration,
/// QT interval]. Downstream measurements are compared against these.
pub fn true_intervals(params: &BeatParams) -> [f64; 5] {
    [
        params.heart_rate_bpm,
        params.p_dur_ms,
        params.p_dur_ms + params.pr_seg_ms,
        params.qrs_ms,
        params.qrs_ms + params.st_ms + params.t_ms,
    ]
}

/// A continuous "chamber mass"-style target: an affine function of the true
/// QRS duration and the mean absolute R amplitude, plus caller-supplied
/// noise. Used to exercise the regression models against a known answer.
pub fn mass_like_target(params: &BeatParams, noise: f64) -> f64 {
    let mean_r: f64 =
        params.amps.values().map(|a| a.r_amp.abs()).sum::<f64>() / params.amps.len() as f64;
    0.9 * params.qrs_ms + 45.0 * mean_r + noise
}

/// [`mass_like_target`] for a whole cohort, with Gaussian noise of the given
/// standard deviation drawn from a dedicated seeded stream.
pub fn mass_targets(rows: &[CohortRow], noise_sd: f64, seed: u64) -> Result<Vec<f64>> {
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::invalid("mass target noise_sd must be ≥ 0"));
    }
    if noise_sd == 0.0 {
        return Ok(rows.iter().map(|r| mass_like_target(&r.params, 0.0)).collect());
    }
    let mut rng = rng_from_seed(seed);
    let normal =
        Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(format!("noise_sd: {e}")))?;
    Ok(rows
        .iter()
        .map(|r| mass_like_target(&r.params, normal.sample(&mut rng)))
        .collect())
}

/// The planted disease signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiseaseKind {
    /// R′ in V1 plus sign-flipped terminal QRS in lead I.
    RightHeart,
    /// Longer QRS and taller R waves in every lead.
    Hypertrophy,
    /// Globally blunted QRS amplitudes.
    LowVoltage,
}

/// Apply a disease at the given severity to a base parameter set. All effects
/// are linear in `severity`, and severity 0 returns the base parameters
/// unchanged (bit-exact), so controls and cases share one code path.
pub fn apply_disease(base: &BeatParams, kind: DiseaseKind, severity: f64) -> Result<BeatParams> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::invalid(format!(
            "severity must lie in [0, 1], got {severity}"
        )));
    }
    let s = severity;
    let mut p = base.clone();
    match kind {
        DiseaseKind::RightHeart => {
            p.rprime_v1_amp = base.rprime_v1_amp + 1.1 * s;
            let v1 = p.amps.get_mut(&LeadId::V1).unwrap();
            v1.r_amp *= 1.0 + 0.3 * s;
            let lead_i = p.amps.get_mut(&LeadId::I).unwrap();
            // Terminal deflection swings from its normal (negative) S value
            // toward a frankly positive one.
            lead_i.s_amp = (1.0 - s) * lead_i.s_amp + s * 0.45;
            lead_i.r_amp *= 1.0 - 0.5 * s;
        }
        DiseaseKind::Hypertrophy => {
            p.qrs_ms = base.qrs_ms * (1.0 + 0.45 * s);
            for a in p.amps.values_mut() {
                a.r_amp *= 1.0 + 0.8 * s;
            }
        }
        DiseaseKind::LowVoltage => {
            for a in p.amps.values_mut() {
                a.q_amp *= 1.0 - 0.7 * s;
                a.r_amp *= 1.0 - 0.7 * s;
                a.s_amp *= 1.0 - 0.7 * s;
            }
        }
    }
    p.validate()?;
    Ok(p)
}

/// A cohort to generate: cases with a disease at sampled severities, plus
/// demographically matched controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_cases: usize,
    pub n_controls: usize,
    pub disease_kind: DiseaseKind,
    /// Severities for cases are drawn uniformly from this closed subinterval
    /// of [0, 1].
    pub severity_range: (f64, f64),
    pub duration_ms: usize,
    pub noise_sd: f64,
    pub jitter_frac: f64,
    /// Closed range of study years records are dated in.
    pub study_years: (i32, i32),
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_cases: 0,
            n_controls: 10,
            disease_kind: DiseaseKind::RightHeart,
            severity_range: (0.3, 1.0),
            duration_ms: 10_000,
            noise_sd: 0.02,
            jitter_frac: 0.04,
            study_years: (2014, 2018),
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.severity_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::invalid(format!(
                "severity_range ({lo}, {hi}) must be an ordered subinterval of [0, 1]"
            )));
        }
        if self.duration_ms < 1000 {
            return Err(Error::invalid("duration_ms must be at least 1000"));
        }
        if self.study_years.0 > self.study_years.1 {
            return Err(Error::invalid("study_years must be an ordered range"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd must be ≥ 0"));
        }
        if !(0.0..=0.2).contains(&self.jitter_frac) {
            return Err(Error::invalid("jitter_frac must lie in [0, 0.2]"));
        }
        Ok(())
    }
}

/// Demographics attached to each generated record, used for matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: u32,
    pub sex: Sex,
    pub study_year: i32,
}

/// One generated cohort member with its ground truth.
#[derive(Debug, Clone)]
pub struct CohortRow {
    pub record: EcgRecord,
    pub labels: LabelSequence,
    pub case_flag: bool,
    pub severity: f64,
    pub demographics: Demographics,
    /// The exact beat parameters the record was rendered from; downstream
    /// tests use these as measurement ground truth.
    pub params: BeatParams,
}

/// Cohort generation output. `unmatched_controls` counts controls that could
/// not be paired with a case (only possible when `n_cases == 0`); generation
/// still succeeds and the caller decides whether to warn.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub rows: Vec<CohortRow>,
    pub unmatched_controls: usize,
}

/// Draw a base (healthy) parameter set. Ranges are chosen so that every
/// disease transform at full severity still fits the RR interval.
fn sample_base_params(rng: &mut ChaCha8Rng, noise_sd: f64, jitter_frac: f64) -> BeatParams {
    let heart_rate_bpm = rng.random_range(55.0..85.0);
    let p_dur_ms = rng.random_range(70.0..105.0);
    let pr_seg_ms = rng.random_range(35.0..70.0);
    let qrs_ms = rng.random_range(80.0..115.0);
    let st_ms = rng.random_range(75.0..110.0);
    let t_ms = rng.random_range(140.0..180.0);
    let global = rng.random_range(0.8..1.2);
    let mut amps = BTreeMap::new();
    for lead in LeadId::ALL {
        let base = default_amplitudes()[&lead];
        let lead_f = rng.random_range(0.92..1.08);
        let p_f = rng.random_range(0.9..1.1);
        let t_f = rng.random_range(0.9..1.1);
        amps.insert(
            lead,
            WaveAmps {
                p_amp: base.p_amp * global * p_f,
                q_amp: base.q_amp * global * lead_f,
                r_amp: base.r_amp * global * lead_f,
                s_amp: base.s_amp * global * lead_f,
                t_amp: base.t_amp * global * t_f,
            },
        );
    }
    BeatParams {
        heart_rate_bpm,
        p_dur_ms,
        pr_seg_ms,
        qrs_ms,
        st_ms,
        t_ms,
        amps,
        rprime_v1_amp: 0.0,
        noise_sd,
        jitter_frac,
    }
}

fn sample_demographics(rng: &mut ChaCha8Rng, years: (i32, i32)) -> Demographics {
    Demographics {
        age: rng.random_range(30..=84),
        sex: if rng.random_bool(0.5) { Sex::F } else { Sex::M },
        study_year: rng.random_range(years.0..=years.1),
    }
}

fn acquired_date(rng: &mut ChaCha8Rng, year: i32) -> chrono::NaiveDate {
    let month = rng.random_range(1..=12);
    let day = rng.random_range(1..=28);
    chrono::NaiveDate::from_ymd_opt(year, month, day).unwrap()
}

/// Generate a full matched cohort. Cases come first, then controls; control
/// `j` is matched to case `j mod n_cases` (same sex and study year, age drawn
/// inside the case's 10-year age bin). Deterministic in the spec.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let mut rows = Vec::with_capacity(spec.n_cases + spec.n_controls);

    for i in 0..spec.n_cases {
        let demographics = sample_demographics(&mut rng, spec.study_years);
        let severity = rng.random_range(spec.severity_range.0..=spec.severity_range.1);
        let base = sample_base_params(&mut rng, spec.noise_sd, spec.jitter_frac);
        let params = apply_disease(&base, spec.disease_kind, severity)?;
        let record_seed: u64 = rng.random();
        let date = acquired_date(&mut rng, demographics.study_year);
        let (mut record, labels) = generate_record(&params, spec.duration_ms, record_seed)?;
        record.patient_id = format!("case-{i:04}");
        record.record_id = format!("case-{i:04}-r0");
        record.acquired_date = date;
        rows.push(CohortRow {
            record,
            labels,
            case_flag: true,
            severity,
            demographics,
            params,
        });
    }

    let mut unmatched_controls = 0usize;
    for j in 0..spec.n_controls {
        let demographics = if spec.n_cases > 0 {
            let matched = rows[j % spec.n_cases].demographics;
            let bin_lo = matched.age / 10 * 10;
            Demographics {
                age: rng.random_range(bin_lo..=bin_lo + 9),
                sex: matched.sex,
                study_year: matched.study_year,
            }
        } else {
            unmatched_controls += 1;
            sample_demographics(&mut rng, spec.study_years)
        };
        let base = sample_base_params(&mut rng, spec.noise_sd, spec.jitter_frac);
        let params = apply_disease(&base, spec.disease_kind, 0.0)?;
        let record_seed: u64 = rng.random();
        let date = acquired_date(&mut rng, demographics.study_year);
        let (mut record, labels) = generate_record(&params, spec.duration_ms, record_seed)?;
        record.patient_id = format!("ctl-{j:04}");
        record.record_id = format!("ctl-{j:04}-r0");
        record.acquired_date = date;
        rows.push(CohortRow {
            record,
            labels,
            case_flag: false,
            severity: 0.0,
            demographics,
            params,
        });
    }

    Ok(Cohort {
        rows,
        unmatched_controls,
    })
}
