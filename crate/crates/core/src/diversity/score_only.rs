use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SelectionBatch, SelectionError};
use crate::model::ScoredImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreOnlyStrategy {
    TopN,
    /// `N` drawn uniformly (seeded) from the top third of the ranking.
    TopThird,
    /// Top `ceil(N/2)` plus bottom `floor(N/2)`.
    TopHalfBottomHalf,
    BottomN,
}

impl ScoreOnlyStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreOnlyStrategy::TopN => "top-n",
            ScoreOnlyStrategy::TopThird => "top-third",
            ScoreOnlyStrategy::TopHalfBottomHalf => "top-half-bottom-half",
            ScoreOnlyStrategy::BottomN => "bottom-n",
        }
    }
}

impl fmt::Display for ScoreOnlyStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreOnlyStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "top-n" | "topn" => Ok(Self::TopN),
            "top-third" | "topthird" => Ok(Self::TopThird),
            "top-half-bottom-half" | "tophalfbottomhalf" => Ok(Self::TopHalfBottomHalf),
            "bottom-n" | "bottomn" => Ok(Self::BottomN),
            other => Err(format!("unknown score-only strategy {other:?}")),
        }
    }
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a: &ScoredImage, b: &ScoredImage) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
}

/// Ascending score, then ascending id.
fn ascending_order(a: &ScoredImage, b: &ScoredImage) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
}

pub(crate) fn check_finite(scores: &[ScoredImage]) -> Result<(), SelectionError> {
    match scores.iter().find(|s| !s.score.is_finite()) {
        Some(s) => Err(SelectionError::InvalidScore {
            id: s.image_id.clone(),
            score: s.score,
        }),
        None => Ok(()),
    }
}

fn check_unique_sorted(ranked: &[&ScoredImage]) -> Result<(), SelectionError> {
    let mut ids: Vec<&str> = ranked.iter().map(|s| s.image_id.as_str()).collect();
    ids.sort_unstable();
    match ids.windows(2).find(|w| w[0] == w[1]) {
        Some(w) => Err(SelectionError::DuplicateId(w[0].to_string())),
        None => Ok(()),
    }
}

/// Picks a batch using only the scores. Ties go to the smaller id.
pub fn select_score_only(
    scores: &[ScoredImage],
    n: usize,
    strategy: ScoreOnlyStrategy,
    seed: u64,
) -> Result<SelectionBatch, SelectionError> {
    if scores.is_empty() {
        if n == 0 {
            return Ok(SelectionBatch::new(strategy.name()));
        }
        return Err(SelectionError::EmptyPool);
    }
    check_finite(scores)?;
    let mut ranked: Vec<&ScoredImage> = scores.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    check_unique_sorted(&ranked)?;
    let m = ranked.len();
    let n = n.min(m);
    let picks: Vec<&ScoredImage> = match strategy {
        ScoreOnlyStrategy::TopN => ranked[..n].to_vec(),
        ScoreOnlyStrategy::BottomN => {
            let mut ascending = ranked.clone();
            ascending.sort_by(|a, b| ascending_order(a, b));
            ascending.truncate(n);
            ascending
        }
        ScoreOnlyStrategy::TopHalfBottomHalf => {
            let top = n.div_ceil(2);
            let mut rest: Vec<_> = ranked[top..].to_vec();
            rest.sort_by(|a, b| ascending_order(a, b));
            ranked[..top]
                .iter()
                .copied()
                .chain(rest.into_iter().take(n - top))
                .collect()
        }
        ScoreOnlyStrategy::TopThird => {
            let window = m.div_ceil(3).max(n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, window, n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| ranked[i]).collect()
        }
    };
    let mut batch = SelectionBatch::new(strategy.name());
    if strategy == ScoreOnlyStrategy::TopThird {
        batch.seed = Some(seed);
    }
    for s in picks {
        batch.push(&s.image_id, s.score);
    }
    Ok(batch)
}

/// Uniform random batch, the baseline every strategy is compared against.
pub fn select_random(
    scores: &[ScoredImage],
    n: usize,
    seed: u64,
) -> Result<SelectionBatch, SelectionError> {
    let mut batch = SelectionBatch::new("random");
    batch.seed = Some(seed);
    if scores.is_empty() {
        return if n == 0 {
            Ok(batch)
        } else {
            Err(SelectionError::EmptyPool)
        };
    }
    // Sort first so the draw does not depend on input order.
    let mut sorted: Vec<&ScoredImage> = scores.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    check_unique_sorted(&sorted)?;
    let n = n.min(sorted.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in rand::seq::index::sample(&mut rng, sorted.len(), n) {
        batch.push(&sorted[i].image_id, sorted[i].score);
    }
    Ok(batch)
}
