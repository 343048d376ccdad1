//! Core library for a 12-lead ECG analysis pipeline.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`synth`] — parametric synthetic 12-lead ECG generator with per-sample
//!    ground-truth segment labels, disease effects, and matched cohorts.
//! 2. [`nnseg`] — a 1-D convolutional encoder/decoder network that classifies
//!    every millisecond of a recording into one of six beat segments, trained
//!    from scratch with ADAM.
//! 3. [`hmm`] — a six-state cyclic hidden Markov model that smooths the raw
//!    network output with Viterbi decoding and a minimum-duration filter.
//! 4. [`measure`] — beat delineation, physiologic interval measurement, and a
//!    725-component per-record feature profile.
//! 5. [`gbm`] — gradient-boosted regression trees with patient-grouped
//!    cross-validation, hyperparameter tuning, and variable importance.
//! 6. [`eval`] — intersection-over-union, interval-agreement statistics,
//!    Bland-Altman summaries, ROC/AUROC with DeLong confidence intervals, and
//!    longitudinal score tracking.
//!
//! All randomness flows through explicitly seeded ChaCha streams; rerunning
//! any stage with the same inputs and seeds reproduces its outputs
//! byte-for-byte.

pub mod error;
pub mod eval;
pub mod gbm;
pub mod hmm;
pub mod io;
pub mod measure;
pub mod nnseg;
pub mod plot;
pub mod resample;
pub mod rng;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
