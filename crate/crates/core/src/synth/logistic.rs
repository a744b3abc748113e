//! L2-regularised logistic regression fitted by Newton's method (IRLS).

use nalgebra::{DMatrix, DVector};

const MAX_NEWTON_STEPS: usize = 100;
const STEP_TOLERANCE: f64 = 1e-10;
/// Keeps the Hessian positive definite along the unpenalised bias.
const BIAS_RIDGE: f64 = 1e-8;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weights `w` (one per feature) followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
}

impl LogisticModel {
    pub fn predict(&self, x: &[f32]) -> f64 {
        let (w, bias) = self.coefficients.split_at(self.coefficients.len() - 1);
        let z = w
            .iter()
            .zip(x)
            .map(|(&w, &x)| w * f64::from(x))
            .sum::<f64>()
            + bias[0];
        sigmoid(z)
    }
}

/// Minimises `Σ log-loss + λ/2 ‖w‖²` (bias unpenalised). Rows of `features`
/// must share one length; `labels` is parallel to it.
pub fn fit_logistic(features: &[&[f32]], labels: &[bool], lambda: f64) -> LogisticModel {
    let n = features.len();
    let d = features.first().map_or(0, |f| f.len());
    let p = d + 1;
    let x = DMatrix::from_fn(n, p, |i, j| {
        if j < d {
            f64::from(features[i][j])
        } else {
            1.0
        }
    });
    let y = DVector::from_fn(n, |i, _| if labels[i] { 1.0 } else { 0.0 });
    let mut w = DVector::zeros(p);
    for _ in 0..MAX_NEWTON_STEPS {
        let mu = (&x * &w).map(sigmoid);
        let mut grad = x.transpose() * (&mu - &y);
        let weights = mu.map(|m| m * (1.0 - m));
        let weighted = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * weights[i]);
        let mut hess = x.transpose() * weighted;
        for j in 0..p {
            if j < d {
                grad[j] += lambda * w[j];
                hess[(j, j)] += lambda;
            } else {
                hess[(j, j)] += BIAS_RIDGE;
            }
        }
        let Some(chol) = hess.cholesky() else { break };
        let step = chol.solve(&grad);
        w -= &step;
        if step.amax() < STEP_TOLERANCE {
            break;
        }
    }
    LogisticModel {
        coefficients: w.iter().copied().collect(),
    }
}
