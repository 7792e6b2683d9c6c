//! The `mcd` command line.
//!
//! Exit status: 0 success, 1 usage error, 2 data error (missing or
//! ill-formed files), 3 runtime failure. Diagnostics go to stderr;
//! `MCD_LOG` sets the log filter (default `warn`).

mod commands;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{ErrorClass, McdError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mcd", version, about = "Detect tiny bright cells in anterior-chamber OCT scans")]
pub struct Cli {
    /// `key = value` file; command-line flags override its entries.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for per-image work (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated corpus.
    Synth(SynthArgs),
    /// Segment the anterior chamber of every image.
    Segment(SegmentArgs),
    /// Emit candidate boxes (no classification).
    Propose(ProposeArgs),
    /// Train the patch classifier on one split of a corpus.
    Train(TrainArgs),
    /// Run the full detector.
    Detect(DetectArgs),
    /// Score detections and/or chamber masks against ground truth.
    Eval(EvalArgs),
    /// Sweep the threshold factor on validation images.
    SearchLambda(SearchLambdaArgs),
    /// Draw predicted and ground-truth boxes onto an image.
    Overlay(OverlayArgs),
    /// Repeated-split comparison of the detector against threshold baselines.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of cells rendered just below the Otsu threshold.
    #[arg(long, value_name = "F")]
    pub dim_cell_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Load masks produced elsewhere; `{stem}` is replaced by the image id.
    #[arg(long, value_name = "TEMPLATE", conflicts_with = "fallback")]
    pub external_masks: Option<String>,
    /// Use the built-in region-growing segmenter (the default).
    #[arg(long)]
    pub fallback: bool,
    #[arg(long, value_name = "R")]
    pub merge_ratio: Option<f64>,
}

/// Candidate-generation parameters shared by `propose`, `detect` and `train`.
#[derive(Debug, Args, Clone, Default)]
pub struct MirpArgs {
    #[arg(long, value_name = "PX")]
    pub s_min: Option<usize>,
    #[arg(long, value_name = "PX")]
    pub s_max: Option<usize>,
    #[arg(long, value_name = "PX")]
    pub box_w: Option<usize>,
    #[arg(long, value_name = "PX")]
    pub box_h: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProposeArgs {
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Chamber masks named `<stem>.png`; computed with the fallback
    /// segmenter when omitted.
    #[arg(long, value_name = "DIR")]
    pub ac_masks: Option<PathBuf>,
    #[arg(long, value_name = "X")]
    pub lambda: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub mirp: MirpArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Train, validation and test percentages.
    #[arg(long, value_name = "T,V,E")]
    pub split: Option<crate::eval::SplitRatios>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Which repetition's split to train on.
    #[arg(long, value_name = "K")]
    pub repetition: Option<usize>,
    #[arg(long, value_name = "MODEL")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Negative patches per positive.
    #[arg(long)]
    pub negatives: Option<usize>,
    #[command(flatten)]
    pub mirp: MirpArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub ac_masks: Option<PathBuf>,
    #[arg(long, value_name = "MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "X")]
    pub lambda: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub mirp: MirpArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detection file.
    #[arg(long, value_name = "FILE")]
    pub pred: Option<PathBuf>,
    /// Ground-truth annotation file or directory.
    #[arg(long, value_name = "PATH")]
    pub gt: Option<PathBuf>,
    /// Comma-separated match criteria.
    #[arg(long, value_name = "LIST")]
    pub criteria: Option<String>,
    /// Predicted chamber masks, `<stem>.png`.
    #[arg(long, value_name = "DIR")]
    pub pred_masks: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub gt_masks: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchLambdaArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_name = "MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Split description written by `train`; defaults to `<MODEL>.split`.
    /// Its validation ids select the images to sweep on.
    #[arg(long, value_name = "FILE", conflicts_with = "all_images")]
    pub split_file: Option<PathBuf>,
    /// Sweep on every corpus image instead of the validation share.
    #[arg(long)]
    pub all_images: bool,
    #[arg(long)]
    pub lambda_lo: Option<f64>,
    #[arg(long)]
    pub lambda_hi: Option<f64>,
    #[arg(long)]
    pub lambda_step: Option<f64>,
    #[command(flatten)]
    pub mirp: MirpArgs,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long, value_name = "FILE")]
    pub image: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub pred: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub gt: Option<PathBuf>,
    #[arg(long, value_name = "PNG")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[arg(long, value_name = "T,V,E")]
    pub split: Option<crate::eval::SplitRatios>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

pub fn exit_code(e: &McdError) -> i32 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Runtime => EXIT_RUNTIME,
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MCD_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_USAGE;
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| commands::dispatch(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(["mcd", "--help"]), EXIT_OK);
        assert_eq!(run(["mcd", "--version"]), EXIT_OK);
        assert_eq!(run(["mcd", "detect", "--help"]), EXIT_OK);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["mcd"]), EXIT_USAGE);
        assert_eq!(run(["mcd", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["mcd", "detect", "--lambda", "abc"]), EXIT_USAGE);
        assert_eq!(run(["mcd", "segment", "--fallback", "--external-masks", "x"]), EXIT_USAGE);
        assert_eq!(run(["mcd", "detect"]), EXIT_USAGE);
        assert_eq!(run(["mcd", "--jobs", "0", "synth"]), EXIT_USAGE);
    }
}
