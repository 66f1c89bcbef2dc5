//! `targan` command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime or numerical abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "targan", version, about = "Target-aware multi-modality image translation")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configuration's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the phantom corpus.
    GenData,
    /// Train a model on the corpus.
    Train {
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate a directory of 16-bit PNG images.
    Translate(TranslateArgs),
    /// Compute metrics for a checkpoint.
    Eval(EvalArgs),
    /// Train and score the ablation variants.
    Ablate,
    /// Train the reference segmenters used by the S-score.
    TrainSegmenter {
        /// Modality names; all modalities when omitted.
        #[arg(long = "modality")]
        modalities: Vec<String>,
    },
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Source modality name (e.g. M0) or index.
    #[arg(long)]
    source: String,
    /// Target modality name (e.g. M1) or index.
    #[arg(long)]
    target: String,
    /// Use the averaged generator (default).
    #[arg(long, conflicts_with = "raw")]
    ema: bool,
    /// Use the raw generator parameters instead of the average.
    #[arg(long)]
    raw: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest; the configured dataset when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated subset of fid, s_score, dice, ravd, whole_l1, target_l1.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    /// Use the raw generator parameters instead of the average.
    #[arg(long)]
    raw: bool,
}

fn exit_code(e: &targan::Error) -> u8 {
    use targan::Error::*;
    match e {
        InvalidRange { .. } | Config(_) | Json { .. } | UndefinedMetric(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = RunConfig::load(cli.config.as_deref()).and_then(|c| c.resolve(cli.seed, cli.out.clone()));
    let run = match run {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenData => commands::gen_data(&run),
        Command::Train { resume } => commands::train(&run, resume.as_deref()),
        Command::Translate(a) => commands::translate(&run, &a.checkpoint, &a.input, &a.source, &a.target, !a.raw),
        Command::Eval(a) => commands::eval(&run, &a.checkpoint, a.manifest.as_deref(), &a.metrics, !a.raw),
        Command::Ablate => commands::ablate(&run),
        Command::TrainSegmenter { modalities } => commands::train_segmenter(&run, &modalities),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
