//! Batch selection from per-image scores, optionally spread out over an
//! embedding space.

mod coreset;
mod file;
mod kmpp;
mod metric;
mod omp;
mod round_robin;
mod score_only;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ModelError;
use crate::model::{Embedding, ScoredImage};

pub use coreset::{coreset_extend, select_coreset, CoresetStart};
pub use file::{
    read_selection, read_selection_from, selection_header, write_selection, write_selection_to,
    SELECTION_KIND,
};
pub use kmpp::{kmpp_extend, select_kmpp};
pub use metric::{build_similarity, CandidatePool, Metric, SimilaritySpec, DENSE_POOL_CAP};
pub use omp::{
    box_constrained_lsq, kernel_bandwidth, omp_solve, omp_with_matrix, select_omp,
    similarity_kernel, solve_box_qp, OmpResult, SOLVER_MAX_ITERATIONS, SOLVER_TOLERANCE,
};
pub use round_robin::select_round_robin;
pub use score_only::{select_random, select_score_only, ScoreOnlyStrategy};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("pool is empty")]
    EmptyPool,
    #[error("pool of {0} items exceeds the dense-matrix cap of {DENSE_POOL_CAP}; shortlist by score first")]
    PoolTooLargeForDense(usize),
    #[error("no embedding for image {0:?}")]
    MissingEmbedding(String),
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("image {id:?} has invalid score {score}")]
    InvalidScore { id: String, score: f64 },
    #[error("image {id:?} has no per-class score for class {class}")]
    MissingPerClassScores { id: String, class: usize },
    #[error("round-robin needs at least one class")]
    NoClasses,
    #[error("similarity matrix has {rows} rows but {scores} scores were given")]
    ShapeMismatch { rows: usize, scores: usize },
    #[error("solver did not converge: {0}")]
    SolverDivergence(String),
    #[error("strategy {0} needs embeddings")]
    EmbeddingsRequired(Strategy),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// An ordered labeling batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionBatch {
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    pub selected: Vec<String>,
    /// Parallel to `selected`.
    pub scores_at_selection: Vec<f64>,
    /// Set for strategies that draw random numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SelectionBatch {
    pub fn new(strategy: impl Into<String>) -> Self {
        Self {
            strategy: strategy.into(),
            metric: None,
            selected: Vec::new(),
            scores_at_selection: Vec::new(),
            seed: None,
        }
    }

    pub fn push(&mut self, id: &str, score: f64) {
        self.selected.push(id.to_string());
        self.scores_at_selection.push(score);
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    TopN,
    TopThird,
    TopHalfBottomHalf,
    BottomN,
    Random,
    Kmpp,
    Coreset,
    Omp,
    RoundRobin,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::TopN,
        Strategy::TopThird,
        Strategy::TopHalfBottomHalf,
        Strategy::BottomN,
        Strategy::Random,
        Strategy::Kmpp,
        Strategy::Coreset,
        Strategy::Omp,
        Strategy::RoundRobin,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::TopN => "top-n",
            Strategy::TopThird => "top-third",
            Strategy::TopHalfBottomHalf => "top-half-bottom-half",
            Strategy::BottomN => "bottom-n",
            Strategy::Random => "random",
            Strategy::Kmpp => "kmpp",
            Strategy::Coreset => "coreset",
            Strategy::Omp => "omp",
            Strategy::RoundRobin => "round-robin",
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        matches!(self, Strategy::Kmpp | Strategy::Coreset | Strategy::Omp)
    }

    fn score_only(&self) -> Option<ScoreOnlyStrategy> {
        match self {
            Strategy::TopN => Some(ScoreOnlyStrategy::TopN),
            Strategy::TopThird => Some(ScoreOnlyStrategy::TopThird),
            Strategy::TopHalfBottomHalf => Some(ScoreOnlyStrategy::TopHalfBottomHalf),
            Strategy::BottomN => Some(ScoreOnlyStrategy::BottomN),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.to_ascii_lowercase();
        let alias = match lower.as_str() {
            "k-means++" | "kmeans++" | "kmeanspp" => "kmpp",
            "core-set" => "coreset",
            other => other,
        };
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == alias)
            .or_else(|| alias.parse::<ScoreOnlyStrategy>().ok().map(Strategy::from))
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

impl From<ScoreOnlyStrategy> for Strategy {
    fn from(s: ScoreOnlyStrategy) -> Self {
        match s {
            ScoreOnlyStrategy::TopN => Strategy::TopN,
            ScoreOnlyStrategy::TopThird => Strategy::TopThird,
            ScoreOnlyStrategy::TopHalfBottomHalf => Strategy::TopHalfBottomHalf,
            ScoreOnlyStrategy::BottomN => Strategy::BottomN,
        }
    }
}

/// Everything needed to pick one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    pub n: usize,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub coreset_start: CoresetStart,
    /// Class indices for round-robin.
    #[serde(default)]
    pub classes: Vec<usize>,
    /// Keep only the top-k images by score before an embedding strategy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortlist: Option<usize>,
}

impl SamplingConfig {
    pub fn new(strategy: Strategy, n: usize) -> Self {
        Self {
            strategy,
            n,
            metric: Metric::default(),
            seed: 0,
            coreset_start: CoresetStart::default(),
            classes: Vec::new(),
            shortlist: None,
        }
    }
}

/// Picks a batch with the configured strategy. Embeddings are required only
/// by the diversity samplers, and are joined to scores by image id.
pub fn select(
    scores: &[ScoredImage],
    embeddings: Option<&[Embedding]>,
    config: &SamplingConfig,
) -> Result<SelectionBatch, SelectionError> {
    let n = config.n;
    if let Some(s) = config.strategy.score_only() {
        return select_score_only(scores, n, s, config.seed);
    }
    match config.strategy {
        Strategy::Random => select_random(scores, n, config.seed),
        Strategy::RoundRobin => select_round_robin(scores, &config.classes, n),
        Strategy::Kmpp | Strategy::Coreset | Strategy::Omp => {
            let embeddings =
                embeddings.ok_or(SelectionError::EmbeddingsRequired(config.strategy))?;
            score_only::check_finite(scores)?;
            let pool = match config.shortlist {
                Some(k) if k < scores.len() => {
                    let mut ranked: Vec<&ScoredImage> = scores.iter().collect();
                    ranked.sort_by(|a, b| score_only::rank_order(a, b));
                    let short: Vec<ScoredImage> =
                        ranked[..k].iter().map(|s| (*s).clone()).collect();
                    CandidatePool::new(embeddings, &short)?
                }
                _ => CandidatePool::new(embeddings, scores)?,
            };
            let mut batch = match config.strategy {
                Strategy::Kmpp => select_kmpp(&pool, n, config.metric, config.seed),
                Strategy::Coreset => {
                    select_coreset(&pool, n, config.metric, config.coreset_start, config.seed)
                }
                _ => select_omp(&pool, n, config.metric),
            }?;
            if config.strategy == Strategy::Coreset
                && config.coreset_start == CoresetStart::HighestScore
            {
                batch.seed = None;
            }
            Ok(batch)
        }
        _ => unreachable!("score-only strategies handled above"),
    }
}
