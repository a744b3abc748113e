//! Multi-iteration labeling loop: train, predict, score, select, label.
//!
//! The engine owns the labeled/unlabeled partition and the ledger; model
//! fitting, inference and evaluation go through a [`TrainerAdapter`].

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diversity::{select, CoresetStart, Metric, SamplingConfig, SelectionError, Strategy};
use crate::error::ModelError;
use crate::header::{split_header, Header};
use crate::model::{Embedding, LedgerRecord, LoopState, PredictionStack, ScoredImage};
use crate::scoring::{score_image, ScoreInput, ScoringConfig, ScoringError};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Model fitting and inference used by the loop.
///
/// `train` receives the full training list, which may name an id more than
/// once when union selection re-picks labeled images.
pub trait TrainerAdapter {
    type Model;

    fn train(&mut self, training_list: &[String]) -> Result<Self::Model, BoxError>;

    /// One stack per requested id, in request order.
    fn predict(
        &mut self,
        model: &Self::Model,
        ids: &[String],
    ) -> Result<Vec<PredictionStack>, BoxError>;

    /// Metrics on the adapter's held-out split.
    fn evaluate(&mut self, model: &Self::Model) -> Result<serde_json::Value, BoxError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPool {
    #[default]
    UnlabeledOnly,
    /// Labeled images may be picked again; they cost nothing to label and
    /// enter the training list a second time.
    UnionLabeledUnlabeled,
}

impl FromStr for SelectionPool {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "unlabeled-only" | "unlabeled" => Ok(Self::UnlabeledOnly),
            "union-labeled-unlabeled" | "union" => Ok(Self::UnionLabeledUnlabeled),
            other => Err(format!("unknown selection pool {other:?}")),
        }
    }
}

impl fmt::Display for SelectionPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::UnlabeledOnly => "unlabeled-only",
            Self::UnionLabeledUnlabeled => "union-labeled-unlabeled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialLabeled {
    /// Drawn uniformly from the pool with the run seed.
    Count(usize),
    Ids(Vec<String>),
}

/// Sampler settings; the batch size and per-iteration seed come from the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub strategy: Strategy,
    pub metric: Metric,
    pub coreset_start: CoresetStart,
    pub classes: Vec<usize>,
    pub shortlist: Option<usize>,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            strategy: Strategy::TopN,
            metric: Metric::default(),
            coreset_start: CoresetStart::default(),
            classes: Vec::new(),
            shortlist: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub initial_labeled: InitialLabeled,
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub sampling: SamplerSpec,
    #[serde(default)]
    pub selection_pool: SelectionPool,
    #[serde(default)]
    pub seed: u64,
    /// Images per `predict` call; bounds the stacks held in memory.
    #[serde(default = "default_predict_chunk")]
    pub predict_chunk: usize,
}

fn default_predict_chunk() -> usize {
    1024
}

impl LoopConfig {
    pub fn new(initial_labeled: InitialLabeled, batch_size: usize, iterations: usize) -> Self {
        Self {
            initial_labeled,
            batch_size,
            iterations,
            scoring: ScoringConfig::default(),
            sampling: SamplerSpec::default(),
            selection_pool: SelectionPool::default(),
            seed: 0,
            predict_chunk: default_predict_chunk(),
        }
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        let bad = |m: &str| Err(LoopError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.predict_chunk == 0 {
            return bad("predict_chunk must be at least 1");
        }
        if self.scoring.uses_detections() {
            return bad(
                "the loop scores trainer predictions; detection entropy needs detector boxes",
            );
        }
        self.scoring
            .validate()
            .map_err(|e| LoopError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error("iteration {iteration}: no unlabeled images left to select")]
    PoolExhausted { iteration: usize },
    #[error("initial labeled set: {0}")]
    InitialSet(String),
    #[error("iteration {iteration}: trainer {stage} failed: {source}")]
    Trainer {
        iteration: usize,
        stage: &'static str,
        #[source]
        source: BoxError,
    },
    #[error("iteration {iteration}: trainer returned {found} stacks for {expected} ids")]
    PredictionCount {
        iteration: usize,
        expected: usize,
        found: usize,
    },
    #[error(
        "iteration {iteration}: prediction for {found:?} returned where {expected:?} was requested"
    )]
    PredictionId {
        iteration: usize,
        expected: String,
        found: String,
    },
    #[error("iteration {iteration}: scoring {id}: {source}")]
    Scoring {
        iteration: usize,
        id: String,
        #[source]
        source: ScoringError,
    },
    #[error("iteration {iteration}: selection: {source}")]
    Selection {
        iteration: usize,
        #[source]
        source: SelectionError,
    },
    #[error("iteration {iteration}: sampler returned {id:?}, which is outside the selection pool")]
    ForeignSelection { iteration: usize, id: String },
}

/// Runs the loop over the pool ids.
///
/// A model is trained on the initial set and evaluated (`initial_metrics`).
/// Each iteration then scores the selection pool with the current model,
/// samples a batch, labels the new ids, appends the whole batch to the
/// training list, retrains and evaluates. The metrics in ledger record `k`
/// belong to the model trained after batch `k` was added.
pub fn run_loop<T: TrainerAdapter>(
    pool_ids: &[String],
    embeddings: Option<&[Embedding]>,
    config: &LoopConfig,
    trainer: &mut T,
) -> Result<LoopState, LoopError> {
    config.validate()?;
    let all: BTreeSet<String> = pool_ids.iter().cloned().collect();
    if all.len() != pool_ids.len() {
        return Err(LoopError::InitialSet("pool ids are not unique".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial = initial_set(&all, &config.initial_labeled, &mut rng)?;
    let mut state = LoopState {
        iteration: 0,
        unlabeled_ids: all.difference(&initial).cloned().collect(),
        labeled_ids: initial.clone(),
        initial_labeled: initial,
        ledger: Vec::new(),
        initial_metrics: None,
    };
    let mut training_list: Vec<String> = state.labeled_ids.iter().cloned().collect();
    let trainer_err = |iteration, stage| {
        move |source| LoopError::Trainer {
            iteration,
            stage,
            source,
        }
    };

    let mut model = trainer
        .train(&training_list)
        .map_err(trainer_err(0, "train"))?;
    state.initial_metrics = Some(
        trainer
            .evaluate(&model)
            .map_err(trainer_err(0, "evaluate"))?,
    );

    let mut unique = 0usize;
    let mut cumulative = 0usize;
    for iteration in 1..=config.iterations {
        let candidates: Vec<String> = match config.selection_pool {
            SelectionPool::UnlabeledOnly => state.unlabeled_ids.iter().cloned().collect(),
            SelectionPool::UnionLabeledUnlabeled => all.iter().cloned().collect(),
        };
        if state.unlabeled_ids.is_empty() && config.selection_pool == SelectionPool::UnlabeledOnly {
            return Err(LoopError::PoolExhausted { iteration });
        }
        let scores = score_candidates(trainer, &model, &candidates, config, iteration)?;
        let sampling = SamplingConfig {
            strategy: config.sampling.strategy,
            n: config.batch_size,
            metric: config.sampling.metric,
            seed: rng.next_u64(),
            coreset_start: config.sampling.coreset_start,
            classes: config.sampling.classes.clone(),
            shortlist: config.sampling.shortlist,
        };
        let batch = select(&scores, embeddings, &sampling)
            .map_err(|source| LoopError::Selection { iteration, source })?;

        let pool_set: HashSet<&String> = candidates.iter().collect();
        let mut newly = 0;
        for id in &batch.selected {
            if !pool_set.contains(id) {
                return Err(LoopError::ForeignSelection {
                    iteration,
                    id: id.clone(),
                });
            }
            if state.unlabeled_ids.remove(id) {
                state.labeled_ids.insert(id.clone());
                newly += 1;
            }
            training_list.push(id.clone());
        }
        unique += newly;
        cumulative += batch.len();

        model = trainer
            .train(&training_list)
            .map_err(trainer_err(iteration, "train"))?;
        let metrics = trainer
            .evaluate(&model)
            .map_err(trainer_err(iteration, "evaluate"))?;
        state.iteration = iteration;
        state.ledger.push(LedgerRecord {
            iteration,
            selected_ids: batch.selected,
            newly_labeled_count: newly,
            unique_image_count: unique,
            cumulative_selected: cumulative,
            labeled_total: state.labeled_ids.len(),
            training_list_len: training_list.len(),
            metrics,
        });
        log::info!(
            "iteration {iteration}: selected {}, newly labeled {newly}, labeled total {}",
            cumulative,
            state.labeled_ids.len()
        );
    }
    Ok(state)
}

fn initial_set(
    all: &BTreeSet<String>,
    spec: &InitialLabeled,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<String>, LoopError> {
    match spec {
        InitialLabeled::Count(k) => {
            if *k > all.len() {
                return Err(LoopError::InitialSet(format!(
                    "{k} requested from a pool of {}",
                    all.len()
                )));
            }
            let ids: Vec<&String> = all.iter().collect();
            Ok(rand::seq::index::sample(rng, ids.len(), *k)
                .into_iter()
                .map(|i| ids[i].clone())
                .collect())
        }
        InitialLabeled::Ids(ids) => {
            let set: BTreeSet<String> = ids.iter().cloned().collect();
            if let Some(missing) = set.iter().find(|id| !all.contains(*id)) {
                return Err(LoopError::InitialSet(format!(
                    "{missing:?} is not in the pool"
                )));
            }
            Ok(set)
        }
    }
}

fn score_candidates<T: TrainerAdapter>(
    trainer: &mut T,
    model: &T::Model,
    candidates: &[String],
    config: &LoopConfig,
    iteration: usize,
) -> Result<Vec<ScoredImage>, LoopError> {
    let mut scores = Vec::with_capacity(candidates.len());
    for chunk in candidates.chunks(config.predict_chunk) {
        let stacks = trainer
            .predict(model, chunk)
            .map_err(|source| LoopError::Trainer {
                iteration,
                stage: "predict",
                source,
            })?;
        if stacks.len() != chunk.len() {
            return Err(LoopError::PredictionCount {
                iteration,
                expected: chunk.len(),
                found: stacks.len(),
            });
        }
        for (id, stack) in chunk.iter().zip(&stacks) {
            if stack.image_id() != id {
                return Err(LoopError::PredictionId {
                    iteration,
                    expected: id.clone(),
                    found: stack.image_id().to_string(),
                });
            }
        }
        let scored: Vec<Result<ScoredImage, LoopError>> = stacks
            .par_iter()
            .map(|stack| {
                score_image(ScoreInput::Stack(stack), &config.scoring).map_err(|source| {
                    LoopError::Scoring {
                        iteration,
                        id: stack.image_id().to_string(),
                        source,
                    }
                })
            })
            .collect();
        for s in scored {
            scores.push(s?);
        }
    }
    Ok(scores)
}

/// Labeling cost and training repeats of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCost {
    pub iteration: usize,
    /// Selected ids that were not labeled before.
    pub labeling_cost: usize,
    /// Selected ids that were already labeled.
    pub training_repeats: usize,
}

/// Recomputes per-iteration cost from the selected ids alone, starting from
/// the initial labeled set.
pub fn dedup_accounting(state: &LoopState) -> Vec<IterationCost> {
    let mut seen: HashSet<&str> = state.initial_labeled.iter().map(String::as_str).collect();
    state
        .ledger
        .iter()
        .map(|record| {
            let cost = record
                .selected_ids
                .iter()
                .filter(|id| seen.insert(id.as_str()))
                .count();
            IterationCost {
                iteration: record.iteration,
                labeling_cost: cost,
                training_repeats: record.selected_ids.len() - cost,
            }
        })
        .collect()
}

pub const LEDGER_KIND: &str = "ledger v1";

/// Ledger file: a header (callers add config and digests), then one JSON
/// record per iteration. The initial model's metrics go in the header.
pub fn write_ledger_to(
    out: &mut impl Write,
    header: &Header,
    state: &LoopState,
) -> std::io::Result<()> {
    let mut header = header.clone();
    header.push("initial_labeled", state.initial_labeled.len());
    if let Some(m) = &state.initial_metrics {
        header.push("initial_metrics", m);
    }
    header.write_to(out)?;
    for record in &state.ledger {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_ledger(
    path: impl AsRef<Path>,
    header: &Header,
    state: &LoopState,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| ModelError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_ledger_to(&mut out, header, state)
        .and_then(|()| out.flush())
        .map_err(|e| ModelError::io(path, e))
}

pub fn read_ledger(path: impl AsRef<Path>) -> Result<(Header, Vec<LedgerRecord>), ModelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ModelError::io(path, e))?;
    read_ledger_from(BufReader::new(file), path)
}

pub fn read_ledger_from(
    reader: impl BufRead,
    path: &Path,
) -> Result<(Header, Vec<LedgerRecord>), ModelError> {
    let (header, lines) = split_header(reader).map_err(|e| ModelError::io(path, e))?;
    let records = lines
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| ModelError::MalformedRecord {
                line,
                reason: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok((header, records))
}
