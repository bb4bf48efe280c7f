//! `argseg`: convert the essay corpus, train and evaluate segmenters, label
//! new sequences and run the built-in self-test.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure (including a failed
//! self-test), 2 usage error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use argseg::corpus::Granularity;
use argseg::models::ArchitectureId;

#[derive(Debug, Parser)]
#[command(name = "argseg", version, about = "Argumentative unit segmentation with BiLSTM labelers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label a brat corpus with BIO tags and write train/test sequence files.
    Convert(ConvertArgs),
    /// Train a model on a sequence file.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled sequence file.
    Evaluate(EvaluateArgs),
    /// Write predicted labels for a sequence file.
    Predict(PredictArgs),
    /// Run gradient checks, attention invariants and format round trips.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// Directory of paired `.txt`/`.ann` files.
    #[arg(long)]
    corpus: PathBuf,
    /// `ID;SET` CSV assigning every essay to TRAIN or TEST.
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value_t = Granularity::Paragraph)]
    granularity: Granularity,
    #[arg(long)]
    out: PathBuf,
}

fn parse_arch(s: &str) -> Result<ArchitectureId, String> {
    s.parse().map_err(|e: argseg::Error| e.to_string())
}

fn parse_inter_stage(s: &str) -> Result<Option<usize>, String> {
    match s {
        "none" => Ok(None),
        n => n
            .parse()
            .map(Some)
            .map_err(|_| format!("expected a width or `none`, got `{n}`")),
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_arch)]
    arch: ArchitectureId,
    /// Embedding spec (TOML).
    #[arg(long)]
    embeddings: PathBuf,
    /// Training sequence file written by `convert`.
    #[arg(long = "train")]
    train_file: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Pick the learning rate by random search with this many trials.
    #[arg(long, value_name = "TRIALS")]
    lr_search: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Share of training essays held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = argseg::models::ModelSpec::DEFAULT_HIDDEN)]
    hidden: usize,
    /// Width between the two stages of two-stage models, or `none`.
    #[arg(long, value_parser = parse_inter_stage, default_value = "4")]
    // Fully qualified so clap passes the whole `Option` through the parser.
    inter_stage_dim: std::option::Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled sequence file.
    #[arg(long = "test")]
    test_file: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Append-only results table (default: `<out>/results.csv`).
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sequence file; its labels are ignored.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Also write the report and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include a layer with a deliberately wrong backward pass.
    #[arg(long, hide = true)]
    perturb_backward: bool,
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
        Command::Convert(a) => commands::convert(&a.corpus, &a.split, a.granularity, &a.out),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => {
            commands::evaluate(&a.checkpoint, &a.test_file, &a.embeddings, a.results.as_deref(), &a.out)
        }
        Command::Predict(a) => commands::predict(&a.checkpoint, &a.input, &a.embeddings, &a.out),
        Command::Selftest(a) => commands::selftest(a.seeds, a.perturb_backward, a.out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
