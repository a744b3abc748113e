//! Image-level informativeness scores.
//!
//! Map-based functions (entropy, mutual information, hallucinated gradients)
//! produce one `H×W` map per class; aggregation reduces the maps to a single
//! image score. Detection entropy works on detector boxes instead.

mod file;
mod ln;
mod maps;
mod pool;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ModelError;
use crate::model::{DetectionSet, PredictionStack, ScoredImage};

pub use file::{read_scores, read_scores_from, write_scores_to, ScoreFileWriter};
pub use maps::{
    bernoulli_entropy, entropy_map, grad_map, grad_variance_map, hallucinated_gradient,
    mean_grad_map, mean_probability_map, mutual_information_map, DEFAULT_EPSILON,
};
pub use pool::{score_pool, score_pool_streaming, PoolOptions, PoolSummary, ScoreFailure};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("{what} index {index} out of range (size {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("gradient variance needs at least 2 ensemble members, got {0}")]
    TooFewMembers(usize),
    #[error("{function} cannot score {input}")]
    KindMismatch {
        function: ScoringFunction,
        input: &'static str,
    },
    #[error("invalid scoring config: {0}")]
    InvalidConfig(String),
    #[error("{id}: record has no {kind} locator")]
    MissingRef { id: String, kind: &'static str },
    #[error("{id}: {source}")]
    Input {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("writing scores: {0}")]
    Output(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringFunction {
    Entropy,
    #[serde(rename = "mi")]
    MutualInformation,
    Grad,
    DetEnt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Max,
    Avg,
    Sum,
}

/// How gradient maps from several ensemble members are combined.
///
/// `None` scores the hallucinated gradient of the ensemble-mean prediction.
/// The variance variants use the per-position variance across members and
/// reduce it per image by max or mean respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradReduce {
    MaxVariance,
    MeanVariance,
    #[default]
    None,
}

macro_rules! named_enum {
    ($ty:ty, $what:literal, { $($name:literal $(| $alias:literal)* => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($name $(| $alias)* => Ok($variant),)+
                    other => Err(format!("unknown {} {other:?}", $what)),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

named_enum!(ScoringFunction, "scoring function", {
    "entropy" => ScoringFunction::Entropy,
    "mi" | "mutual-information" => ScoringFunction::MutualInformation,
    "grad" => ScoringFunction::Grad,
    "det-ent" | "detent" => ScoringFunction::DetEnt,
});

named_enum!(Aggregation, "aggregation", {
    "max" => Aggregation::Max,
    "avg" | "mean" => Aggregation::Avg,
    "sum" => Aggregation::Sum,
});

named_enum!(GradReduce, "gradient reduction", {
    "max-variance" => GradReduce::MaxVariance,
    "mean-variance" => GradReduce::MeanVariance,
    "none" => GradReduce::None,
});

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub function: ScoringFunction,
    pub aggregation: Aggregation,
    pub grad_ensemble_reduce: GradReduce,
    pub epsilon: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            function: ScoringFunction::MutualInformation,
            aggregation: Aggregation::Max,
            grad_ensemble_reduce: GradReduce::None,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ScoringConfig {
    pub fn new(function: ScoringFunction, aggregation: Aggregation) -> Self {
        Self {
            function,
            aggregation,
            ..Self::default()
        }
    }

    pub fn with_grad_reduce(mut self, reduce: GradReduce) -> Self {
        self.grad_ensemble_reduce = reduce;
        self
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let bad = |msg: String| Err(ScoringError::InvalidConfig(msg));
        if !(self.epsilon > 0.0 && self.epsilon < 1e-6) {
            return bad(format!(
                "epsilon must lie in (0, 1e-6), got {}",
                self.epsilon
            ));
        }
        match (self.function, self.aggregation) {
            (ScoringFunction::DetEnt, Aggregation::Avg) => {
                return bad("det-ent aggregates with max or sum".into())
            }
            (ScoringFunction::DetEnt, _) => {}
            (f, Aggregation::Sum) => return bad(format!("{f} aggregates with max or avg")),
            _ => {}
        }
        match (self.function, self.grad_ensemble_reduce, self.aggregation) {
            (_, GradReduce::None, _) => {}
            (ScoringFunction::Grad, GradReduce::MaxVariance, Aggregation::Max) => {}
            (ScoringFunction::Grad, GradReduce::MeanVariance, Aggregation::Avg) => {}
            (ScoringFunction::Grad, reduce, agg) => {
                return bad(format!(
                    "gradient reduction {reduce} conflicts with aggregation {agg}"
                ))
            }
            (f, reduce, _) => {
                return bad(format!("gradient reduction {reduce} does not apply to {f}"))
            }
        }
        Ok(())
    }

    /// Whether this configuration reads detections rather than probability maps.
    pub fn uses_detections(&self) -> bool {
        self.function == ScoringFunction::DetEnt
    }
}

/// Input to [`score_image`].
#[derive(Debug, Clone, Copy)]
pub enum ScoreInput<'a> {
    Stack(&'a PredictionStack),
    Detections(&'a DetectionSet),
}

impl ScoreInput<'_> {
    fn kind(&self) -> &'static str {
        match self {
            ScoreInput::Stack(_) => "a prediction stack",
            ScoreInput::Detections(_) => "a detection set",
        }
    }
}

/// Entropy of every detection's confidence, pooled over classes, reduced by
/// max or sum. No detections scores zero.
pub fn detection_entropy(
    dets: &DetectionSet,
    aggregation: Aggregation,
    eps: f64,
) -> Result<ScoredImage, ScoringError> {
    let entropies = dets
        .detections
        .iter()
        .map(|d| bernoulli_entropy(d.confidence, eps));
    let score = match aggregation {
        Aggregation::Max => entropies.fold(0.0, f64::max),
        Aggregation::Sum => sum_sorted(entropies.collect()),
        Aggregation::Avg => {
            return Err(ScoringError::InvalidConfig(
                "det-ent aggregates with max or sum".into(),
            ))
        }
    };
    Ok(ScoredImage::new(dets.image_id.clone(), score))
}

/// Order-independent summation: detections may arrive in any order.
fn sum_sorted(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

fn class_map(
    stack: &PredictionStack,
    class: usize,
    config: &ScoringConfig,
) -> Result<Array2<f64>, ScoringError> {
    let eps = config.epsilon;
    match config.function {
        ScoringFunction::Entropy => {
            Ok(mean_probability_map(stack, class)?.mapv(|p| bernoulli_entropy(p, eps)))
        }
        ScoringFunction::MutualInformation => mutual_information_map(stack, class, eps),
        ScoringFunction::Grad => match config.grad_ensemble_reduce {
            GradReduce::None => mean_grad_map(stack, class),
            GradReduce::MaxVariance | GradReduce::MeanVariance => grad_variance_map(stack, class),
        },
        ScoringFunction::DetEnt => Err(ScoringError::KindMismatch {
            function: ScoringFunction::DetEnt,
            input: "a prediction stack",
        }),
    }
}

/// Scores one image under `config`.
///
/// Map functions keep per-class reductions in `per_class_scores`. `Max`
/// takes the largest value over all classes and positions; `Avg` averages
/// all `C·H·W` cells. Entropy scores the ensemble-mean map, which for a
/// single member is that member's map.
pub fn score_image(
    input: ScoreInput<'_>,
    config: &ScoringConfig,
) -> Result<ScoredImage, ScoringError> {
    config.validate()?;
    let stack = match (config.function, input) {
        (ScoringFunction::DetEnt, ScoreInput::Detections(dets)) => {
            return detection_entropy(dets, config.aggregation, config.epsilon)
        }
        (ScoringFunction::DetEnt, other) | (_, other @ ScoreInput::Detections(_)) => {
            return Err(ScoringError::KindMismatch {
                function: config.function,
                input: other.kind(),
            })
        }
        (_, ScoreInput::Stack(stack)) => stack,
    };
    let classes = stack.classes();
    let mut per_class = Vec::with_capacity(classes);
    let mut total = 0.0;
    let mut cells = 0usize;
    for class in 0..classes {
        let map = class_map(stack, class, config)?;
        match config.aggregation {
            Aggregation::Max => per_class.push(map.iter().copied().fold(0.0, f64::max)),
            _ => {
                let sum: f64 = map.iter().sum();
                total += sum;
                cells += map.len();
                per_class.push(sum / map.len() as f64);
            }
        }
    }
    let score = match config.aggregation {
        Aggregation::Max => per_class.iter().copied().fold(0.0, f64::max),
        _ => total / cells as f64,
    };
    Ok(ScoredImage {
        image_id: stack.image_id().to_string(),
        score,
        per_class_scores: Some(per_class),
    })
}
