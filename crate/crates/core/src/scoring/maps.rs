//! Per-position informativeness maps computed from a prediction stack.

use ndarray::{Array2, Zip};

use super::ln::ln;
use super::ScoringError;
use crate::model::PredictionStack;

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Entropy in nats of a Bernoulli variable, with `p` clamped to `[eps, 1 - eps]`.
#[inline]
pub fn bernoulli_entropy(p: f64, eps: f64) -> f64 {
    let q = p.max(eps).min(1.0 - eps);
    -(q * ln(q) + (1.0 - q) * ln(1.0 - q))
}

/// Magnitude of the cross-entropy gradient w.r.t. the output logit when the
/// prediction itself is taken as the label (`1` iff `p >= 0.5`).
#[inline]
pub fn hallucinated_gradient(p: f64) -> f64 {
    let label = if p >= 0.5 { 1.0 } else { 0.0 };
    (p - label).abs()
}

fn check_member(stack: &PredictionStack, member: usize) -> Result<(), ScoringError> {
    if member >= stack.members() {
        return Err(ScoringError::IndexOutOfRange {
            what: "member",
            index: member,
            len: stack.members(),
        });
    }
    Ok(())
}

fn check_class(stack: &PredictionStack, class: usize) -> Result<(), ScoringError> {
    if class >= stack.classes() {
        return Err(ScoringError::IndexOutOfRange {
            what: "class",
            index: class,
            len: stack.classes(),
        });
    }
    Ok(())
}

pub fn entropy_map(
    stack: &PredictionStack,
    member: usize,
    class: usize,
    eps: f64,
) -> Result<Array2<f64>, ScoringError> {
    check_member(stack, member)?;
    check_class(stack, class)?;
    Ok(stack
        .map(member, class)
        .mapv(|p| bernoulli_entropy(f64::from(p), eps)))
}

pub fn mean_probability_map(
    stack: &PredictionStack,
    class: usize,
) -> Result<Array2<f64>, ScoringError> {
    check_class(stack, class)?;
    let dims = stack.dims();
    let mut sum = Array2::<f64>::zeros((dims.height, dims.width));
    for member in 0..dims.members {
        Zip::from(&mut sum)
            .and(&stack.map(member, class))
            .for_each(|s, &p| *s += f64::from(p));
    }
    let n = dims.members as f64;
    sum.mapv_inplace(|s| s / n);
    Ok(sum)
}

/// Entropy of the ensemble mean minus the mean member entropy.
pub fn mutual_information_map(
    stack: &PredictionStack,
    class: usize,
    eps: f64,
) -> Result<Array2<f64>, ScoringError> {
    check_class(stack, class)?;
    let dims = stack.dims();
    let cells = dims.height * dims.width;
    let values = stack.values();
    let mut prob_sum = vec![0.0f64; cells];
    let mut entropy_sum = vec![0.0f64; cells];
    for member in 0..dims.members {
        let start = (member * dims.classes + class) * cells;
        let map = &values[start..start + cells];
        for ((ps, hs), &p) in prob_sum.iter_mut().zip(&mut entropy_sum).zip(map) {
            let p = f64::from(p);
            *ps += p;
            *hs += bernoulli_entropy(p, eps);
        }
    }
    let n = dims.members as f64;
    for (ps, &hs) in prob_sum.iter_mut().zip(&entropy_sum) {
        let mi = bernoulli_entropy(*ps / n, eps) - hs / n;
        // Jensen gap; only rounding can push it below zero.
        *ps = mi.max(0.0);
    }
    Ok(Array2::from_shape_vec((dims.height, dims.width), prob_sum)
        .expect("cell count matches shape"))
}

pub fn grad_map(
    stack: &PredictionStack,
    member: usize,
    class: usize,
) -> Result<Array2<f64>, ScoringError> {
    check_member(stack, member)?;
    check_class(stack, class)?;
    Ok(stack
        .map(member, class)
        .mapv(|p| hallucinated_gradient(f64::from(p))))
}

/// Hallucinated gradient of the ensemble-mean prediction.
pub fn mean_grad_map(stack: &PredictionStack, class: usize) -> Result<Array2<f64>, ScoringError> {
    Ok(mean_probability_map(stack, class)?.mapv(hallucinated_gradient))
}

/// Population variance across members of the per-member hallucinated gradients.
pub fn grad_variance_map(
    stack: &PredictionStack,
    class: usize,
) -> Result<Array2<f64>, ScoringError> {
    check_class(stack, class)?;
    let dims = stack.dims();
    if dims.members < 2 {
        return Err(ScoringError::TooFewMembers(dims.members));
    }
    let shape = (dims.height, dims.width);
    let mut sum = Array2::<f64>::zeros(shape);
    for member in 0..dims.members {
        Zip::from(&mut sum)
            .and(&stack.map(member, class))
            .for_each(|s, &p| *s += hallucinated_gradient(f64::from(p)));
    }
    let n = dims.members as f64;
    sum.mapv_inplace(|s| s / n);
    // Two-pass variance for accuracy.
    let mut var = Array2::<f64>::zeros(shape);
    for member in 0..dims.members {
        Zip::from(&mut var)
            .and(&sum)
            .and(&stack.map(member, class))
            .for_each(|v, &mean, &p| {
                let d = hallucinated_gradient(f64::from(p)) - mean;
                *v += d * d;
            });
    }
    var.mapv_inplace(|v| v / n);
    Ok(var)
}
