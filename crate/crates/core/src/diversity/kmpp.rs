//! Score-weighted k-means++ seeding.
//!
//! After a uniform first pick, each further item `x` is drawn with
//! probability proportional to `s(x) · d_min(x)`, where `d_min` is the
//! distance to the nearest item picked so far.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CandidatePool, Metric, SelectionBatch, SelectionError};

pub fn select_kmpp(
    pool: &CandidatePool,
    n: usize,
    metric: Metric,
    seed: u64,
) -> Result<SelectionBatch, SelectionError> {
    let mut batch = SelectionBatch::new("kmpp");
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
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = if n == 0 {
        Vec::new()
    } else {
        let first = rng.random_range(0..m);
        kmpp_extend(pool, &[first], n, metric, &mut rng)
    };
    for i in chosen {
        batch.push(&pool.ids()[i], pool.scores()[i]);
    }
    Ok(batch)
}

/// Continues seeding from already chosen indices until `n` items (or the
/// whole pool) are chosen. Returns all chosen indices in pick order.
///
/// When every remaining weight is zero (duplicates of chosen items, or zero
/// scores) the next item is drawn uniformly from the unchosen ones.
pub fn kmpp_extend(
    pool: &CandidatePool,
    chosen: &[usize],
    n: usize,
    metric: Metric,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let m = pool.len();
    let n = n.min(m);
    let mut picked = vec![false; m];
    let mut order = Vec::with_capacity(n);
    let mut d_min = vec![f64::INFINITY; m];
    let mut dist = vec![0.0; m];
    let mut add = |i: usize, picked: &mut [bool], d_min: &mut [f64], order: &mut Vec<usize>| {
        if picked[i] {
            return;
        }
        picked[i] = true;
        order.push(i);
        pool.distances_from(metric, i, &mut dist);
        for (d, &new) in d_min.iter_mut().zip(&dist) {
            if new < *d {
                *d = new;
            }
        }
    };
    for &i in chosen {
        add(i, &mut picked, &mut d_min, &mut order);
    }
    let scores = pool.scores();
    let mut weights = vec![0.0; m];
    while order.len() < n {
        let mut total = 0.0;
        for i in 0..m {
            weights[i] = if picked[i] { 0.0 } else { scores[i] * d_min[i] };
            total += weights[i];
        }
        let next = if total > 0.0 && total.is_finite() {
            draw_weighted(&weights, total, rng)
        } else {
            let free: Vec<usize> = (0..m).filter(|&i| !picked[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        add(next, &mut picked, &mut d_min, &mut order);
    }
    order
}

fn draw_weighted(weights: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if acc > target {
                return i;
            }
        }
    }
    // Rounding can leave `target` just above the accumulated sum.
    last_positive
}
