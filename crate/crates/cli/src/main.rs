use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use deepseg_cli::{Command, Overrides};

const EXIT_HELP: &str = "\
Exit status:
  0  success
  2  invalid configuration or usage (field-level diagnostic on stderr)
  3  I/O failure: missing, unreadable, corrupt or unwritable file
  4  numeric failure: non-finite loss or gradient
  5  finished with warnings (e.g. evaluate skipped unmatched or corrupt cases)

Environment:
  DEEPSEG_THREADS  maximum number of worker threads";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Cross-validation split, training, checkpoint and history CSV.
    Train,
    /// Segment slices with a checkpoint and write DSEG masks.
    Predict,
    /// Compare predicted and ground-truth masks, write the metric CSV.
    Evaluate,
    /// Size and timing report for each encoder family.
    Benchmark,
    /// Generate a synthetic phantom dataset.
    Synth,
    /// Write before/after augmentation pairs.
    AugmentPreview,
}

#[derive(Debug, Parser)]
#[command(name = "deepseg", version, about = "Encoder-decoder brain tumor segmentation harness", after_help = EXIT_HELP)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Cross-validation fold, overrides `fold`.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    fold: Option<u8>,
    /// Master seed, overrides `train.seed` and `data.phantom.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Train => Command::Train,
        Cmd::Predict => Command::Predict,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Benchmark => Command::Benchmark,
        Cmd::Synth => Command::Synth,
        Cmd::AugmentPreview => Command::AugmentPreview,
    };
    let overrides = Overrides {
        fold: cli.fold.map(usize::from),
        seed: cli.seed,
        out: cli.out,
    };
    std::process::exit(deepseg_cli::run(command, &cli.config, &overrides));
}
