//! `erank` command-line interface: one subcommand per pipeline stage.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use erank::pipeline::{run_stage, with_threads, ExperimentConfig, Stage};

#[derive(Parser)]
#[command(
    name = "erank",
    version,
    about = "Fielded entity retrieval over knowledge-graph triples: \
             indexing, ranking, embeddings, learning to rank and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Experiment configuration file (TOML)
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the master seed from [run]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the worker thread count from [run] (0 = default)
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the triple file into per-entity documents
    Ingest(StageArgs),
    /// Build the positional five-field index
    Index(StageArgs),
    /// Train knowledge-graph embeddings
    Embed(StageArgs),
    /// Retrieve top-k candidates per query
    Candidates(StageArgs),
    /// Extract labelled feature vectors for all candidates
    Features(StageArgs),
    /// Split queries into folds and train per-fold ranking models
    Train(StageArgs),
    /// Re-rank candidates with the held-out fold models
    Rerank(StageArgs),
    /// Score a run against the relevance judgments
    Eval(StageArgs),
    /// Compare two runs with a paired significance test
    Compare(StageArgs),
    /// Summarize weight mass per feature group across fold models
    Weights(StageArgs),
    /// Run every stage in order
    Pipeline(StageArgs),
}

impl Command {
    fn split(&self) -> (Stage, &StageArgs) {
        match self {
            Command::Ingest(a) => (Stage::Ingest, a),
            Command::Index(a) => (Stage::Index, a),
            Command::Embed(a) => (Stage::Embed, a),
            Command::Candidates(a) => (Stage::Candidates, a),
            Command::Features(a) => (Stage::Features, a),
            Command::Train(a) => (Stage::Train, a),
            Command::Rerank(a) => (Stage::Rerank, a),
            Command::Eval(a) => (Stage::Eval, a),
            Command::Compare(a) => (Stage::Compare, a),
            Command::Weights(a) => (Stage::Weights, a),
            Command::Pipeline(a) => (Stage::Pipeline, a),
        }
    }
}

fn run(stage: Stage, args: &StageArgs) -> erank::Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.run.threads = threads;
    }
    with_threads(config.run.threads, || run_stage(&config, stage)).and_then(|r| r)
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
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    let (stage, args) = cli.command.split();
    if let Err(e) = run(stage, args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
