//! `audiocap`: feature extraction, training, evaluation and reporting.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "audiocap", version, about = "Audio captioning with temporal sub-sampling")]
struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `training.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute log mel-band energies for every WAV file in a directory.
    ExtractFeatures(ExtractArgs),
    /// Build the vocabulary and loss weights from a captions CSV.
    BuildVocab(VocabArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Caption an evaluation split and score it.
    Evaluate(EvaluateArgs),
    /// Caption every feature file in a directory.
    Predict(PredictArgs),
    /// Print encoder sequence lengths per sub-sampling factor.
    SubsampleReport(SubsampleArgs),
    /// Print the resolved configuration.
    Config(ConfigArgs),
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    audio_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Re-extract even when outputs are up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct VocabArgs {
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    features_dir: Option<PathBuf>,
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Use an existing vocabulary instead of building one from the captions.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features_dir: Option<PathBuf>,
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Output directory for predictions.csv, report.json and report.txt.
    #[arg(long)]
    out: PathBuf,
    /// Defaults to vocab.json next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// JSON sidecar with externally computed `meteor` and `spice`.
    #[arg(long)]
    external_scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features_dir: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SubsampleArgs {
    #[arg(long, default_value_t = 1292)]
    t_min: usize,
    #[arg(long, default_value_t = 2584)]
    t_max: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    factors: Vec<usize>,
    /// Also time inference on random inputs for every factor.
    #[arg(long)]
    bench: bool,
    #[arg(long, default_value_t = 2584)]
    bench_frames: usize,
    #[arg(long, default_value_t = 2)]
    bench_clips: usize,
    #[arg(long, default_value_t = 3)]
    bench_rounds: usize,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Print the built-in defaults instead of the resolved configuration.
    #[arg(long)]
    dump_defaults: bool,
    /// Print the model's parameter count.
    #[arg(long)]
    param_count: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Info
        })
        .parse_default_env()
        .init();
    let cfg = || config::RunConfig::load(cli.config.as_deref(), cli.seed);
    match cli.command {
        Command::ExtractFeatures(a) => commands::extract_features(&cfg()?, a.audio_dir, a.out_dir, a.workers, a.force),
        Command::BuildVocab(a) => commands::build_vocab(&cfg()?, a.captions, &a.out),
        Command::Train(a) => commands::train(cfg()?, a.features_dir, a.captions, a.out_dir, a.vocab),
        Command::Evaluate(a) => commands::evaluate(
            &cfg()?,
            &a.checkpoint,
            a.features_dir,
            a.captions,
            &a.out,
            a.vocab,
            a.external_scores,
        ),
        Command::Predict(a) => commands::predict(&cfg()?, &a.checkpoint, a.features_dir, a.vocab, a.out),
        Command::SubsampleReport(a) => commands::subsample_report(&a, cli.seed.unwrap_or(0)),
        Command::Config(a) => commands::show_config(cfg, a.dump_defaults, a.param_count),
    }
}
