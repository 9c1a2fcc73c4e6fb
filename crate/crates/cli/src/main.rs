//! `fedimod` — command-line pipeline over the simulator library.
//!
//! Subcommands mirror the pipeline stages: `generate` a synthetic corpus,
//! `ingest` a JSONL corpus, `label` it against an external scoring endpoint,
//! `analyze` conversations and fragmentation, run one `experiment` cell, or
//! `compare` the full locality × strategy grid. Every run writes a
//! `manifest.json` recording the effective configuration and seeds; given the
//! same seed and inputs, report outputs are byte-identical across runs.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fedimod",
    version,
    about = "Federation simulator and moderation experiment pipeline"
)]
struct Cli {
    /// Cap the worker-thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic corpus with planted toxicity.
    Generate(GenerateArgs),
    /// Validate and normalize a JSONL corpus into a corpus directory.
    Ingest(IngestArgs),
    /// Fill missing toxicity scores from an external scoring endpoint.
    Label(LabelArgs),
    /// Build conversation trees and emit characterisation and fragmentation
    /// reports.
    Analyze(AnalyzeArgs),
    /// Run one training/inference locality cell under one federation
    /// strategy.
    Experiment(ExperimentArgs),
    /// Run the full locality × strategy grid and emit one consolidated
    /// report.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator config as TOML (or flat key=value for scalar fields).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_instances: Option<u32>,
    #[arg(long)]
    toxic_rate: Option<f64>,
    #[arg(long)]
    context_dependent_fraction: Option<f64>,
    #[arg(long)]
    follow_density: Option<f64>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    /// Corpus directory (from `generate` or `ingest`).
    #[arg(long = "in")]
    input: PathBuf,
    /// Scoring endpoint URL. The API key is read from the FEDIMOD_API_KEY
    /// environment variable, never from flags or files.
    #[arg(long)]
    endpoint: String,
    /// Output corpus directory; defaults to updating the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Requests per second ceiling on a sliding 1-second window.
    #[arg(long, default_value_t = 10.0)]
    qps: f64,
    /// Append-only score cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Concurrent requests in flight.
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// Parent-step bias of the root-seeking walk.
    #[arg(long, default_value_t = 0.75)]
    gamma: f64,
    /// Maximum walk steps.
    #[arg(long, default_value_t = 4)]
    walk_length: u32,
    /// Geometric context weight per step.
    #[arg(long, default_value_t = 0.75)]
    discount: f64,
    /// Training epochs.
    #[arg(long, default_value_t = 3)]
    epochs: u32,
    /// Initial learning rate (halves per epoch down to half its value).
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    /// Train fraction of the train/test split.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Classification threshold on predicted scores.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Scorer input: walked context or toot text alone.
    #[arg(long, default_value = "aware", value_parser = ["aware", "free"])]
    model_kind: String,
    /// Minimum conversation length donated under the toot-federation
    /// strategy.
    #[arg(long, default_value_t = 5)]
    min_len: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Training-inference cell: g-g, g-l, l-g or l-l.
    #[arg(long)]
    locality: String,
    /// Federation strategy: none, full, toot or model.
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
}

/// Exit codes: 0 success, 2 usage (from clap), 3 invalid data or config,
/// 4 network/labeling failure, 1 anything else.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    use fedimod_core::{corpus, fednet, labeler, synthgen};
    for cause in err.chain() {
        if cause.is::<corpus::IngestError>()
            || cause.is::<corpus::CorpusError>()
            || cause.is::<synthgen::GenError>()
            || cause.is::<fednet::FednetError>()
            || cause.is::<commands::DataError>()
        {
            return 3;
        }
        if cause.is::<labeler::LabelError>() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    let result = match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Ingest(args) => commands::ingest(args),
        Command::Label(args) => commands::label(args),
        Command::Analyze(args) => commands::analyze(args),
        Command::Experiment(args) => commands::experiment(args),
        Command::Compare(args) => commands::compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
