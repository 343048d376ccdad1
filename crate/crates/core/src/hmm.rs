//! Hidden Markov smoothing of the per-sample class stream.
//!
//! The network emits an independent class decision per millisecond; cardiac
//! segments, however, traverse a fixed cycle (P → PR → QRS → ST → T → TP →
//! P …) and never jump states. A six-state HMM whose transition structure
//! encodes that cycle turns the noisy per-sample argmax stream into the most
//! probable admissible path, and a duration filter then removes any remaining
//! implausibly short complexes.
//!
//! Parameters are estimated by counting: transitions and baseline occupancy
//! from ground-truth label sequences, emissions from (truth, predicted)
//! pairs so the model learns the network's actual confusion behaviour.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnseg::{forward, UNetModel};
use crate::resample::extract_window;
use crate::types::{EcgRecord, LabelSequence, SegmentClass, N_CLASSES};

/// Format stamp written into HMM parameter files.
pub const HMM_FORMAT_VERSION: &str = "ecg-hmm-v1";

/// Default additive probability floor applied to admissible entries so that
/// log-space decoding never sees −∞ on a permitted move.
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Minimum plausible segment duration in milliseconds; shorter runs are
/// absorbed by [`duration_filter`].
pub const MIN_RUN_MS: usize = 10;

/// Six-state HMM over [`SegmentClass`] in canonical order.
///
/// `transition` is structurally cyclic: row `i` may only place mass on `i`
/// itself and on `successor(i)`; every other entry is exactly zero, floors
/// included. `emission[s][o]` is the probability of the network reporting
/// class `o` when the truth is `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
    /// Additive floor that was applied during estimation.
    pub floor: f64,
}

/// Decoded state path plus its (natural) log probability under the model.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub states: LabelSequence,
    pub log_prob: f64,
}

fn is_allowed_transition(from: usize, to: usize) -> bool {
    let from_class = SegmentClass::from_code(from).expect("state index");
    to == from || to == from_class.successor().code()
}

impl HmmParams {
    /// Estimate all parameters from truth sequences and the paired predicted
    /// argmax streams. Convenience over [`estimate_transitions`] +
    /// [`estimate_emissions`].
    pub fn estimate(
        truth: &[LabelSequence],
        predicted: &[LabelSequence],
        floor: f64,
    ) -> Result<HmmParams> {
        let (initial, transition) = estimate_transitions(truth, floor)?;
        let emission = estimate_emissions(truth, predicted, floor)?;
        let params = HmmParams {
            initial,
            transition,
            emission,
            floor,
        };
        params.validate()?;
        Ok(params)
    }

    /// Check stochasticity (rows sum to 1 ± 1e-9, entries ≥ 0) and the cyclic
    /// transition structure (forbidden entries exactly zero).
    pub fn validate(&self) -> Result<()> {
        let check_row = |row: &[f64], what: &str| -> Result<()> {
            if row.len() != N_CLASSES {
                return Err(Error::invalid(format!(
                    "{what} has {} entries, expected {N_CLASSES}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
                return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("{what} sums to {sum}, expected 1")));
            }
            Ok(())
        };
        check_row(&self.initial, "initial distribution")?;
        if self.transition.len() != N_CLASSES || self.emission.len() != N_CLASSES {
            return Err(Error::invalid("transition and emission must be 6×6"));
        }
        for i in 0..N_CLASSES {
            check_row(&self.transition[i], &format!("transition row {i}"))?;
            check_row(&self.emission[i], &format!("emission row {i}"))?;
            for j in 0..N_CLASSES {
                if !is_allowed_transition(i, j) && self.transition[i][j] != 0.0 {
                    return Err(Error::invalid(format!(
                        "transition {i}→{j} is forbidden by the segment cycle but has mass {}",
                        self.transition[i][j]
                    )));
                }
            }
        }
        if !(self.floor.is_finite() && self.floor >= 0.0) {
            return Err(Error::invalid("floor must be a finite probability ≥ 0"));
        }
        Ok(())
    }
}

/// Estimate the baseline distribution π (relative state occupancy) and the
/// cyclic transition matrix A (bigram counts restricted to self/successor)
/// from ground-truth sequences.
///
/// The additive `floor` is applied to every π entry and to the two admissible
/// entries of each A row before normalization; forbidden entries stay exactly
/// zero. A state with no outgoing bigrams falls back to a uniform split over
/// its admissible moves (with a warning on stderr).
pub fn estimate_transitions(
    labeled: &[LabelSequence],
    floor: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if labeled.is_empty() || labeled.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid(
            "estimate_transitions needs at least one nonempty sequence",
        ));
    }
    if !(floor.is_finite() && floor >= 0.0) {
        return Err(Error::invalid("floor must be a finite probability ≥ 0"));
    }
    let mut occupancy = [0.0f64; N_CLASSES];
    let mut bigrams = [[0.0f64; N_CLASSES]; N_CLASSES];
    for seq in labeled {
        for w in seq.classes.windows(2) {
            let (a, b) = (w[0].code(), w[1].code());
            // Ground truth is cyclic by construction; anything else would be
            // label noise and must not leak mass into forbidden entries.
            if is_allowed_transition(a, b) {
                bigrams[a][b] += 1.0;
            }
        }
        for c in &seq.classes {
            occupancy[c.code()] += 1.0;
        }
    }

    let total: f64 = occupancy.iter().sum();
    let pi_denom = total + N_CLASSES as f64 * floor;
    let initial: Vec<f64> = occupancy.iter().map(|&c| (c + floor) / pi_denom).collect();

    let mut transition = vec![vec![0.0; N_CLASSES]; N_CLASSES];
    for (i, row) in transition.iter_mut().enumerate() {
        let out: f64 = bigrams[i].iter().sum();
        let allowed: Vec<usize> = (0..N_CLASSES).filter(|&j| is_allowed_transition(i, j)).collect();
        if out == 0.0 && floor == 0.0 {
            eprintln!(
                "warning: state {} has no observed outgoing transitions; using a uniform split",
                SegmentClass::from_code(i).unwrap()
            );
            for &j in &allowed {
                row[j] = 1.0 / allowed.len() as f64;
            }
            continue;
        }
        if out == 0.0 {
            eprintln!(
                "warning: state {} has no observed outgoing transitions; floor gives a uniform split",
                SegmentClass::from_code(i).unwrap()
            );
        }
        let denom = out + allowed.len() as f64 * floor;
        for &j in &allowed {
            row[j] = (bigrams[i][j] + floor) / denom;
        }
    }
    Ok((initial, transition))
}

/// Estimate the emission matrix B from paired (truth, predicted) sequences:
/// `B[s][o]` is the floored, row-normalized count of the network reporting
/// class `o` where the truth is `s`.
pub fn estimate_emissions(
    truth: &[LabelSequence],
    predicted: &[LabelSequence],
    floor: f64,
) -> Result<Vec<Vec<f64>>> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(Error::Mismatch(format!(
            "emission estimation needs matched nonempty corpora, got {} truth vs {} predicted",
            truth.len(),
            predicted.len()
        )));
    }
    if !(floor.is_finite() && floor >= 0.0) {
        return Err(Error::invalid("floor must be a finite probability ≥ 0"));
    }
    let mut counts = [[0.0f64; N_CLASSES]; N_CLASSES];
    for (t, p) in truth.iter().zip(predicted) {
        if t.len() != p.len() || t.is_empty() {
            return Err(Error::Mismatch(format!(
                "paired sequences must be nonempty and equally long, got {} vs {}",
                t.len(),
                p.len()
            )));
        }
        for (tc, pc) in t.classes.iter().zip(&p.classes) {
            counts[tc.code()][pc.code()] += 1.0;
        }
    }
    let mut emission = vec![vec![0.0; N_CLASSES]; N_CLASSES];
    for (s, row) in emission.iter_mut().enumerate() {
        let seen: f64 = counts[s].iter().sum();
        if seen == 0.0 && floor == 0.0 {
            eprintln!(
                "warning: class {} never occurs in the truth corpus; using a uniform emission row",
                SegmentClass::from_code(s).unwrap()
            );
            row.iter_mut().for_each(|p| *p = 1.0 / N_CLASSES as f64);
            continue;
        }
        let denom = seen + N_CLASSES as f64 * floor;
        for (o, p) in row.iter_mut().enumerate() {
            *p = (counts[s][o] + floor) / denom;
        }
    }
    Ok(emission)
}

/// Exact max-probability state path in log space (Viterbi).
///
/// Ties at every maximization — both between predecessors and at the final
/// state — break toward the lower state index. Errors if no path has nonzero
/// probability (possible only with floors disabled).
pub fn viterbi_decode(params: &HmmParams, observations: &LabelSequence) -> Result<DecodeResult> {
    params.validate()?;
    if observations.is_empty() {
        return Err(Error::invalid("viterbi_decode: empty observation sequence"));
    }
    let n = N_CLASSES;
    let t_len = observations.len();
    let ln = |p: f64| p.ln(); // ln(0) = −∞, which is exactly what we want
    let ln_a: Vec<Vec<f64>> = params
        .transition
        .iter()
        .map(|r| r.iter().map(|&p| ln(p)).collect())
        .collect();
    let ln_b: Vec<Vec<f64>> = params
        .emission
        .iter()
        .map(|r| r.iter().map(|&p| ln(p)).collect())
        .collect();

    let obs: Vec<usize> = observations.classes.iter().map(|c| c.code()).collect();
    let mut delta = vec![0.0f64; n];
    for s in 0..n {
        delta[s] = ln(params.initial[s]) + ln_b[s][obs[0]];
    }
    // backpointers[t][s] = best predecessor of state s at step t (t ≥ 1)
    let mut back = vec![vec![0usize; n]; t_len];
    let mut next = vec![0.0f64; n];
    for t in 1..t_len {
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for j in 0..n {
                let cand = delta[j] + ln_a[j][s];
                if cand > best {
                    best = cand;
                    arg = j;
                }
            }
            next[s] = best + ln_b[s][obs[t]];
            back[t][s] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }

    let mut best = f64::NEG_INFINITY;
    let mut last = 0usize;
    for s in 0..n {
        if delta[s] > best {
            best = delta[s];
            last = s;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::Numeric(
            "viterbi_decode: no admissible path has nonzero probability".into(),
        ));
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    let classes = path
        .iter()
        .map(|&s| SegmentClass::from_code(s).unwrap())
        .collect();
    Ok(DecodeResult {
        states: LabelSequence::new(classes),
        log_prob: best,
    })
}

/// Absorb every maximal run shorter than `min_ms` into its preceding run
/// (the leading run, having no predecessor, is absorbed forward instead);
/// iterated to a fixed point. Length is preserved, and the output contains
/// no run shorter than `min_ms` unless the whole sequence is shorter.
pub fn duration_filter(states: &LabelSequence, min_ms: usize) -> LabelSequence {
    let mut runs: Vec<(SegmentClass, usize)> = states.runs();
    loop {
        let Some(i) = runs
            .iter()
            .position(|&(_, len)| len < min_ms)
            .filter(|_| runs.len() > 1)
        else {
            break;
        };
        if i == 0 {
            let absorbed = runs[0].1;
            runs[1].1 += absorbed;
            runs.remove(0);
        } else {
            let absorbed = runs[i].1;
            runs[i - 1].1 += absorbed;
            runs.remove(i);
            // The neighbor beyond the removed run may share the predecessor's
            // class; merge so run lengths stay maximal.
            if i < runs.len() && runs[i].0 == runs[i - 1].0 {
                runs[i - 1].1 += runs[i].1;
                runs.remove(i);
            }
        }
    }
    let mut classes = Vec::with_capacity(states.len());
    for (class, len) in runs {
        classes.extend(std::iter::repeat_n(class, len));
    }
    LabelSequence::new(classes)
}

/// Per-sample argmax of a `[t][class]` probability matrix; ties toward the
/// lower class index.
fn argmax_classes(probs: &[Vec<f64>]) -> Vec<SegmentClass> {
    probs
        .iter()
        .map(|row| {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for (c, &p) in row.iter().enumerate() {
                if p > best {
                    best = p;
                    arg = c;
                }
            }
            SegmentClass::from_code(arg).unwrap()
        })
        .collect()
}

/// Raw network labeling of one record: tile the record with non-overlapping
/// network windows (final partial window right-aligned; a record shorter than
/// one window is right-padded and the padding discarded) and argmax the
/// per-sample class probabilities. One class per millisecond, no smoothing.
pub fn argmax_stream(model: &UNetModel, record: &EcgRecord) -> Result<LabelSequence> {
    if record.sampling_hz != 1000 {
        return Err(Error::invalid(format!(
            "segmentation requires a 1000 Hz record, got {} Hz",
            record.sampling_hz
        )));
    }
    let win = model.config.input_len;
    let total = record.n_samples();
    let mut observed: Vec<SegmentClass> = Vec::with_capacity(total);

    if total < win {
        // Single window: copy the record to the left, zero-pad to the right,
        // and keep only the genuine samples of the output.
        let mut window = vec![vec![0.0; win]; model.config.n_leads];
        let full = extract_window(record, 0, total)?;
        for (dst, src) in window.iter_mut().zip(&full) {
            dst[..total].copy_from_slice(src);
        }
        let probs = forward(model, &window, false, 0)?;
        observed.extend(argmax_classes(&probs[..total]));
    } else {
        let n_full = total / win;
        for k in 0..n_full {
            let window = extract_window(record, k * win, win)?;
            let probs = forward(model, &window, false, 0)?;
            observed.extend(argmax_classes(&probs));
        }
        let rem = total - n_full * win;
        if rem > 0 {
            let window = extract_window(record, total - win, win)?;
            let probs = forward(model, &window, false, 0)?;
            observed.extend(argmax_classes(&probs[win - rem..]));
        }
    }
    Ok(LabelSequence::new(observed))
}

/// Full segmentation of one record: [`argmax_stream`], Viterbi decoding of
/// the whole stream, then the minimum-duration filter.
///
/// The output has exactly one class per millisecond of the record.
pub fn segment(model: &UNetModel, params: &HmmParams, record: &EcgRecord) -> Result<LabelSequence> {
    let observed = argmax_stream(model, record)?;
    let decoded = viterbi_decode(params, &observed)?;
    Ok(duration_filter(&decoded.states, MIN_RUN_MS))
}

#[derive(Serialize, Deserialize)]
struct HmmFile {
    format_version: String,
    class_order: Vec<String>,
    floor: f64,
    initial: Vec<f64>,
    /// Row-major 6×6.
    transition: Vec<f64>,
    /// Row-major 6×6.
    emission: Vec<f64>,
}

fn class_order() -> Vec<String> {
    (0..N_CLASSES)
        .map(|c| SegmentClass::from_code(c).unwrap().to_string())
        .collect()
}

/// Write HMM parameters as JSON (row-major matrices, class-order stamp).
pub fn save_hmm(params: &HmmParams, path: &std::path::Path) -> Result<()> {
    params.validate()?;
    let file = HmmFile {
        format_version: HMM_FORMAT_VERSION.into(),
        class_order: class_order(),
        floor: params.floor,
        initial: params.initial.clone(),
        transition: params.transition.iter().flatten().copied().collect(),
        emission: params.emission.iter().flatten().copied().collect(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Load HMM parameters, refusing mismatched format versions or class orders.
pub fn load_hmm(path: &std::path::Path) -> Result<HmmParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let file: HmmFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.format_version != HMM_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "HMM file has format version {:?}, this build reads {:?}",
            file.format_version, HMM_FORMAT_VERSION
        )));
    }
    if file.class_order != class_order() {
        return Err(Error::Format(format!(
            "HMM file class order {:?} does not match {:?}",
            file.class_order,
            class_order()
        )));
    }
    if file.transition.len() != N_CLASSES * N_CLASSES
        || file.emission.len() != N_CLASSES * N_CLASSES
    {
        return Err(Error::Format("HMM file matrices must be 6×6".into()));
    }
    let unflatten = |flat: &[f64]| -> Vec<Vec<f64>> {
        flat.chunks(N_CLASSES).map(|r| r.to_vec()).collect()
    };
    let params = HmmParams {
        initial: file.initial,
        transition: unflatten(&file.transition),
        emission: unflatten(&file.emission),
        floor: file.floor,
    };
    params.validate()?;
    Ok(params)
}
