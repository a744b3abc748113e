use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use alquery::active_loop::{
    run_loop as drive_loop, write_ledger, InitialLabeled, LoopConfig, LEDGER_KIND,
};
use alquery::diversity::{
    select as pick, selection_header, write_selection, SamplingConfig, Strategy,
};
use alquery::header::{file_digest, Header};
use alquery::manifest::{load_manifest, ManifestReader};
use alquery::scoring::{score_pool_streaming, PoolOptions, ScoreFileWriter, ScoringConfig};
use alquery::synth::{
    generate_pool, load_pool_dir, write_pool_dir, PoolDirOptions, PoolFiles, SynthPoolSpec,
    ToyTrainer, TrainerOptions,
};
use alquery::tensor::read_embeddings;
use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::CommandFactory;

use crate::{Cli, LoopArgs, ScoreArgs, SelectArgs, SynthArgs};

pub const SCORES_KIND: &str = "scores v1";

fn usage_error(message: impl std::fmt::Display) -> ! {
    Cli::command()
        .error(ErrorKind::InvalidValue, message)
        .exit()
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn score(args: ScoreArgs) -> Result<ExitCode> {
    let config = ScoringConfig {
        function: args.scoring.function,
        aggregation: args.scoring.aggregation,
        grad_ensemble_reduce: args.scoring.grad_reduce,
        epsilon: args.scoring.epsilon,
    };
    if let Err(e) = config.validate() {
        usage_error(e);
    }
    if args.workers == Some(0) {
        usage_error("--workers must be at least 1");
    }
    let options = PoolOptions {
        workers: args.workers.unwrap_or_else(default_workers),
        keep_going: args.keep_going,
        chunk_size: args.chunk_size.max(1),
    };
    let digest = file_digest(&args.manifest)?;
    let records = ManifestReader::open(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let header = Header::new(SCORES_KIND)
        .with("function", config.function)
        .with("aggregation", config.aggregation)
        .with("grad_reduce", config.grad_ensemble_reduce)
        .with("epsilon", config.epsilon)
        .with("manifest_sha256", digest);
    let mut writer = ScoreFileWriter::new(create(&args.output)?, &header)
        .with_context(|| format!("writing {}", args.output.display()))?;
    let summary = score_pool_streaming(records, base, &config, &options, |s| writer.write(&s))?;
    writer
        .into_inner()
        .flush()
        .with_context(|| format!("writing {}", args.output.display()))?;
    log::info!(
        "scored {} images with {} workers",
        summary.scored,
        options.workers
    );
    for failure in &summary.failures {
        eprintln!("{}: {}", failure.image_id, failure.error);
    }
    if summary.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "{} of {} images failed",
            summary.failures.len(),
            summary.failures.len() + summary.scored
        );
        Ok(ExitCode::from(1))
    }
}

pub fn select(args: SelectArgs) -> Result<ExitCode> {
    if args.strategy.needs_embeddings() && args.embeddings.is_none() {
        usage_error(format!("strategy {} needs --embeddings", args.strategy));
    }
    if args.strategy == Strategy::RoundRobin && args.classes.is_empty() {
        usage_error("strategy round-robin needs --classes");
    }
    let (_, scores) = alquery::scoring::read_scores(&args.scores)?;
    let embeddings = args.embeddings.as_ref().map(read_embeddings).transpose()?;
    let config = SamplingConfig {
        strategy: args.strategy,
        n: args.n,
        metric: args.metric,
        seed: args.seed,
        coreset_start: args.coreset_start,
        classes: args.classes.clone(),
        shortlist: args.shortlist,
    };
    let batch = pick(&scores, embeddings.as_deref(), &config)?;
    let mut header = selection_header(&batch, args.n);
    if args.strategy == Strategy::RoundRobin {
        header.push(
            "classes",
            args.classes
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    if args.strategy == Strategy::Coreset {
        header.push("coreset_start", args.coreset_start);
    }
    if let (Some(k), true) = (args.shortlist, args.strategy.needs_embeddings()) {
        header.push("shortlist", k);
    }
    header.push("scores_sha256", file_digest(&args.scores)?);
    if let Some(path) = &args.embeddings {
        header.push("embeddings_sha256", file_digest(path)?);
    }
    write_selection(&args.output, &header, &batch)?;
    log::info!("selected {} of {} images", batch.len(), scores.len());
    Ok(ExitCode::SUCCESS)
}

pub fn run_loop(args: LoopArgs) -> Result<ExitCode> {
    let files = PoolFiles::new(&args.pool);
    let records = load_manifest(files.manifest())?;
    let mut config = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            match toml::from_str::<LoopConfig>(&text) {
                Ok(c) => c,
                Err(e) => usage_error(format!("{}: {e}", path.display())),
            }
        }
        None => {
            let labeled = records
                .iter()
                .filter(|r| r.labeled)
                .map(|r| r.id.clone())
                .collect();
            LoopConfig::new(InitialLabeled::Ids(labeled), 100, 1)
        }
    };
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.initial {
        config.initial_labeled = InitialLabeled::Count(v);
    }
    if let Some(v) = args.strategy {
        config.sampling.strategy = v;
    }
    if let Some(v) = args.metric {
        config.sampling.metric = v;
    }
    if let Some(v) = args.function {
        config.scoring.function = v;
    }
    if let Some(v) = args.aggregation {
        config.scoring.aggregation = v;
    }
    if let Some(v) = args.selection_pool {
        config.selection_pool = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Err(e) = config.validate() {
        usage_error(e);
    }

    let pool = Arc::new(load_pool_dir(&args.pool)?);
    let trainer_options = TrainerOptions {
        bootstrap: !args.no_bootstrap,
        l2: args.l2,
        seed: config.seed,
    };
    let mut trainer = ToyTrainer::new(pool.clone(), trainer_options);
    let ids: Vec<String> = records.into_iter().map(|r| r.id).collect();
    let state = drive_loop(&ids, Some(&pool.embeddings), &config, &mut trainer)?;
    state
        .check_invariants()
        .map_err(|e| anyhow::anyhow!("loop state invariant violated: {e}"))?;

    let header = Header::new(LEDGER_KIND)
        .with("config", serde_json::to_string(&config)?)
        .with("seed", config.seed)
        .with("bootstrap", trainer_options.bootstrap)
        .with("l2", trainer_options.l2)
        .with("manifest_sha256", file_digest(files.manifest())?)
        .with("truth_sha256", file_digest(files.truth())?)
        .with("latents_sha256", file_digest(files.latents())?);
    write_ledger(&args.output, &header, &state)?;
    Ok(ExitCode::SUCCESS)
}

pub fn synth(args: SynthArgs) -> Result<ExitCode> {
    let prevalence = if args.prevalence.is_empty() {
        vec![0.3; args.classes]
    } else {
        args.prevalence
    };
    let spec = SynthPoolSpec {
        pool_size: args.pool_size,
        classes: args.classes,
        height: args.height,
        width: args.width,
        members: args.members,
        prevalence,
        redundancy: args.redundancy,
        noise: args.noise,
        latent_dim: args.latent_dim,
        test_size: args.test_size,
        seed: args.seed,
    };
    if let Err(e) = spec.validate() {
        usage_error(e);
    }
    let pool = generate_pool(&spec)?;
    let options = PoolDirOptions {
        initial_labeled: args.initial_labeled.unwrap_or(args.pool_size / 10),
        trainer: TrainerOptions {
            bootstrap: !args.no_bootstrap,
            seed: args.seed,
            ..TrainerOptions::default()
        },
    };
    write_pool_dir(&args.output, Arc::new(pool), &options)?;
    log::info!(
        "wrote {} images to {}",
        spec.pool_size,
        args.output.display()
    );
    Ok(ExitCode::SUCCESS)
}
