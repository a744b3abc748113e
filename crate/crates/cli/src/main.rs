//! `alquery`: score pools, select labeling batches, run labeling loops and
//! generate synthetic pools.
//!
//! Exit codes: 0 success, 1 runtime or I/O error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use alquery::active_loop::SelectionPool;
use alquery::diversity::{CoresetStart, Metric, Strategy};
use alquery::scoring::{Aggregation, GradReduce, ScoringFunction};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "alquery",
    version,
    about = "Active learning query engine for object detection pools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every image of a manifest.
    Score(ScoreArgs),
    /// Pick a labeling batch from a score file.
    Select(SelectArgs),
    /// Run the train/score/select loop on a synthetic pool directory.
    Loop(LoopArgs),
    /// Generate a synthetic pool directory.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct ScoringArgs {
    /// entropy, mi, grad or det-ent.
    #[arg(long, default_value = "mi")]
    function: ScoringFunction,
    /// max, avg or sum.
    #[arg(long = "agg", default_value = "max")]
    aggregation: Aggregation,
    /// Ensemble reduction for grad: none, max-variance or mean-variance.
    #[arg(long, default_value = "none")]
    grad_reduce: GradReduce,
    #[arg(long, default_value_t = alquery::scoring::DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Scoring threads.
    #[arg(long, env = "ALQUERY_WORKERS")]
    workers: Option<usize>,
    /// Report failing images and keep scoring the rest (exit code 1 if any fail).
    #[arg(long)]
    keep_going: bool,
    /// Images read from the manifest per scheduling round.
    #[arg(long, default_value_t = 256)]
    chunk_size: usize,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long)]
    n: usize,
    /// ALEM embeddings; required by kmpp, coreset and omp.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class indices for round-robin, comma separated.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<usize>,
    #[arg(long, default_value = "highest-score")]
    coreset_start: CoresetStart,
    /// Keep only the top-k scores before a diversity strategy.
    #[arg(long)]
    shortlist: Option<usize>,
}

#[derive(Debug, Args)]
struct LoopArgs {
    /// Pool directory written by `synth`.
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// TOML loop configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Random initial set of this size instead of the manifest's labeled images.
    #[arg(long)]
    initial: Option<usize>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    function: Option<ScoringFunction>,
    #[arg(long = "agg")]
    aggregation: Option<Aggregation>,
    /// unlabeled-only or union-labeled-unlabeled.
    #[arg(long)]
    selection_pool: Option<SelectionPool>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit every ensemble member on the same data.
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long, default_value_t = 1.0)]
    l2: f64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pool_size: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 1)]
    height: usize,
    #[arg(long, default_value_t = 1)]
    width: usize,
    #[arg(long, default_value_t = 6)]
    members: usize,
    /// Per-class prevalence, comma separated (default 0.3 for every class).
    #[arg(long, value_delimiter = ',')]
    prevalence: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    redundancy: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Latent and embedding dimension (at least --classes).
    #[arg(long, default_value_t = alquery::synth::DEFAULT_LATENT_DIM)]
    latent_dim: usize,
    #[arg(long, default_value_t = 1000)]
    test_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Images flagged labeled and used to train the ensemble that writes
    /// the prediction stacks (default: 10% of the pool).
    #[arg(long)]
    initial_labeled: Option<usize>,
    #[arg(long)]
    no_bootstrap: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match cli.command {
        Command::Score(args) => commands::score(args),
        Command::Select(args) => commands::select(args),
        Command::Loop(args) => commands::run_loop(args),
        Command::Synth(args) => commands::synth(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// The error and its causes, skipping causes already quoted by the message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let part = cause.to_string();
        if !text.ends_with(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}
