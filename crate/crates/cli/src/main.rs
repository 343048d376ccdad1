//! `ecg`: a file-based pipeline for synthetic 12-lead ECG analysis.
//!
//! Stages communicate only through files: `synth` writes a labeled cohort,
//! `train-seg` fits the segmentation network and its smoothing model,
//! `segment` labels records, `profile` turns labels into interval tables and
//! 725-component profiles, `train-model` fits cross-validated boosted trees,
//! `score` applies a fitted model to new profiles, and `eval`/`track` grade
//! the results. Every run logs its resolved
//! configuration and seed to `run_config.json` in the output directory, and
//! identical inputs plus identical seeds reproduce outputs byte for byte.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use config::Overrides;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scale {
    /// Reduced network and schedule that trains in minutes on one CPU core.
    Desk,
    /// Full-scale network and schedule.
    Paper,
}

impl Scale {
    fn as_str(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ecg",
    version,
    about = "Synthetic 12-lead ECG segmentation, profiling, and modeling pipeline"
)]
struct Cli {
    /// Base random seed for this run (default 0, or the cohort spec's seed
    /// for `synth`)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Network/training scale preset
    #[arg(long, global = true, value_enum, default_value_t = Scale::Desk)]
    scale: Scale,

    /// Output directory; created if missing
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Flat key=value override file for stage hyperparameters
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic cohort with ground-truth labels and targets
    Synth {
        /// Cohort spec JSON; defaults are used when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train the segmentation network and its smoothing model
    TrainSeg {
        /// Cohort manifest with records and ground-truth labels
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Label every record of a manifest with a trained model
    Segment {
        /// Cohort manifest naming the records to label
        #[arg(long)]
        manifest: PathBuf,
        /// Trained network file (unet.json)
        #[arg(long)]
        model: PathBuf,
        /// Trained smoothing model file (hmm.json)
        #[arg(long)]
        hmm: PathBuf,
    },
    /// Measure intervals and build per-record profiles
    Profile {
        /// Cohort manifest naming the records
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of predicted label files; the manifest's own labels are
        /// used when omitted
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Tune, assess, and fit a gradient-boosted model on profiles
    TrainModel {
        /// Profile table from `profile`
        #[arg(long)]
        profiles: PathBuf,
        /// Targets CSV (record_id,target)
        #[arg(long)]
        targets: PathBuf,
    },
    /// Score a profile table with a trained gradient-boosted model
    Score {
        /// Trained model file (gbm.json)
        #[arg(long)]
        model: PathBuf,
        /// Profile table from `profile`
        #[arg(long)]
        profiles: PathBuf,
    },
    /// Quality metrics between estimates and references
    Eval {
        #[command(subcommand)]
        which: EvalCmd,
    },
    /// Per-patient longitudinal score trajectories
    Track {
        /// Score table with patient_id and acquired_date columns
        #[arg(long)]
        scores: PathBuf,
        /// Also render an SVG of the trajectories
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Interval agreement: absolute deviations and Bland-Altman bands
    Agreement {
        /// Estimated interval table
        #[arg(long)]
        est: PathBuf,
        /// Reference interval table
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Also render Bland-Altman SVGs
        #[arg(long)]
        svg: bool,
    },
    /// Per-class IoU of predicted labels against a manifest's labels
    Iou {
        /// Cohort manifest carrying the reference labels
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of predicted label files
        #[arg(long)]
        labels: PathBuf,
    },
    /// ROC/AUROC with confidence interval and operating threshold
    Roc {
        /// Score table with target and score columns
        #[arg(long)]
        scores: PathBuf,
        /// Also render the ROC curve as SVG
        #[arg(long)]
        svg: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| anyhow::anyhow!("--out <DIR> is required"))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ov = Overrides::load(cli.config.as_deref())?;
    let seed = cli.seed;
    let scale = cli.scale.as_str();

    match &cli.cmd {
        Cmd::Synth { spec } => commands::synth::run(spec.as_deref(), &out, seed, scale, ov),
        Cmd::TrainSeg { manifest } => commands::train_seg::run(manifest, &out, seed, scale, ov),
        Cmd::Segment {
            manifest,
            model,
            hmm,
        } => commands::segment::run(manifest, model, hmm, &out, seed, scale, ov),
        Cmd::Profile { manifest, labels } => {
            commands::profile::run(manifest, labels.as_deref(), &out, seed, scale, ov)
        }
        Cmd::TrainModel { profiles, targets } => {
            commands::train_model::run(profiles, targets, &out, seed, scale, ov)
        }
        Cmd::Score { model, profiles } => {
            commands::score::run(model, profiles, &out, seed, scale, ov)
        }
        Cmd::Eval { which } => match which {
            EvalCmd::Agreement {
                est,
                reference,
                svg,
            } => commands::eval::agreement(est, reference, &out, *svg, seed, scale, ov),
            EvalCmd::Iou { manifest, labels } => {
                commands::eval::iou(manifest, labels, &out, seed, scale, ov)
            }
            EvalCmd::Roc { scores, svg } => {
                commands::eval::roc(scores, &out, *svg, seed, scale, ov)
            }
        },
        Cmd::Track { scores, svg } => commands::track::run(scores, &out, *svg, seed, scale, ov),
    }
}

/// Collapse a message to a single machine-parsable line.
fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("error: invalid arguments: {}", one_line(&e.to_string()));
            std::process::exit(2);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {}", one_line(&format!("{err:#}")));
        std::process::exit(1);
    }
}
