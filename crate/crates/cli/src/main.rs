//! `jnt`: data generation, training, denoising, evaluation and the
//! mask-count study.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "jnt",
    version,
    about = "Joint blind-spot denoising and segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of clean/noisy/label PGM triples.
    GenData(GenDataArgs),
    /// Train a denoiser, a segmenter, or both jointly.
    Train(TrainArgs),
    /// Denoise every PGM in a directory.
    Denoise(DenoiseArgs),
    /// Score a dataset and write a per-image metrics CSV with a mean row.
    Eval(EvalArgs),
    /// Train replicate denoisers per mask count and compare loss variance.
    MaskStudy(MaskStudyArgs),
}

#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// key=value config file; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<String>,
    #[arg(long)]
    size: Option<String>,
    /// soma or plaque.
    #[arg(long)]
    style: Option<String>,
    /// Comma-separated noise levels, assigned to samples round-robin.
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
pub struct TrainArgs {
    /// n2v, supervised, unsupervised or pretrain-seg.
    #[arg(long)]
    mode: Option<String>,
    /// Dataset directory with a manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Segmentation checkpoint: required (frozen) for unsupervised mode,
    /// optional starting point for supervised and pretrain-seg.
    #[arg(long)]
    seg: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    denoiser: Option<PathBuf>,
    #[arg(long)]
    seg: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct MaskStudyArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated masked-pixel counts.
    #[arg(long)]
    mask_counts: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    /// Parallel training slots.
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Denoise(a) => commands::denoise(a),
        Command::Eval(a) => commands::eval(a),
        Command::MaskStudy(a) => commands::mask_study_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("jnt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
