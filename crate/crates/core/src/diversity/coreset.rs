//! Greedy score-weighted core-set: each pick maximises `s(x) · min_c d(x, c)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CandidatePool, Metric, SelectionBatch, SelectionError};

/// How the first centre is chosen before the greedy max-min steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoresetStart {
    #[default]
    HighestScore,
    /// Uniform draw using the run seed.
    Random,
}

impl FromStr for CoresetStart {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "highest-score" | "highest" => Ok(Self::HighestScore),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown core-set start {other:?}")),
        }
    }
}

impl fmt::Display for CoresetStart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HighestScore => "highest-score",
            Self::Random => "random",
        })
    }
}

pub fn select_coreset(
    pool: &CandidatePool,
    n: usize,
    metric: Metric,
    start: CoresetStart,
    seed: u64,
) -> Result<SelectionBatch, SelectionError> {
    let mut batch = SelectionBatch::new("coreset");
    batch.seed = Some(seed);
    batch.metric = Some(metric);
    let m = pool.len();
    if m == 0 {
        return if n == 0 {
            Ok(batch)
        } else {
            Err(SelectionError::EmptyPool)
        };
    }
    if n == 0 {
        return Ok(batch);
    }
    let first = match start {
        CoresetStart::HighestScore => {
            let scores = pool.scores();
            // Strict comparison keeps the smallest id among equal scores.
            (1..m).fold(0, |best, i| if scores[i] > scores[best] { i } else { best })
        }
        CoresetStart::Random => ChaCha8Rng::seed_from_u64(seed).random_range(0..m),
    };
    for i in coreset_extend(pool, &[first], n, metric) {
        batch.push(&pool.ids()[i], pool.scores()[i]);
    }
    Ok(batch)
}

/// Greedy continuation from already chosen centres. Ties in the weighted
/// distance go to the smaller id (lower index).
pub fn coreset_extend(
    pool: &CandidatePool,
    chosen: &[usize],
    n: usize,
    metric: Metric,
) -> Vec<usize> {
    let m = pool.len();
    let n = n.min(m);
    let scores = pool.scores();
    let mut picked = vec![false; m];
    let mut d_min = vec![f64::INFINITY; m];
    let mut dist = vec![0.0; m];
    let mut order = Vec::with_capacity(n);
    let mut next = chosen.iter().copied();
    loop {
        let pick = match next.next() {
            Some(i) if picked[i] => continue,
            Some(i) => i,
            None if order.len() >= n => break,
            None => {
                let mut best: Option<(usize, f64)> = None;
                for i in 0..m {
                    if picked[i] {
                        continue;
                    }
                    let w = scores[i] * d_min[i];
                    if best.is_none_or(|(_, bw)| w > bw) {
                        best = Some((i, w));
                    }
                }
                match best {
                    Some((i, _)) => i,
                    None => break,
                }
            }
        };
        picked[pick] = true;
        order.push(pick);
        pool.distances_from(metric, pick, &mut dist);
        for (d, &new) in d_min.iter_mut().zip(&dist) {
            if new < *d {
                *d = new;
            }
        }
    }
    order
}
