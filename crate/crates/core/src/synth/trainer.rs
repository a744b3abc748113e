//! Toy ensemble: per-class logistic scorers on bootstrap resamples of the
//! labeled latents.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::logistic::{fit_logistic, LogisticModel};
use super::SynthPool;
use crate::active_loop::{BoxError, TrainerAdapter};
use crate::model::{PredictionStack, StackDims};

/// Relative strength of the spatial perturbation in probability maps.
const MAP_AMPLITUDE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerOptions {
    /// Resample the training list per member. Without it every member is
    /// fitted on the same data and the ensemble agrees exactly.
    pub bootstrap: bool,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainerOptions {
    fn default() -> Self {
        Self {
            bootstrap: true,
            l2: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ClassScorer {
    Logistic(LogisticModel),
    /// The labeled data held a single class value; predict the prior.
    Prior(f64),
}

impl ClassScorer {
    fn predict(&self, x: &[f32]) -> f64 {
        match self {
            ClassScorer::Logistic(m) => m.predict(x),
            ClassScorer::Prior(p) => *p,
        }
    }
}

/// `members[e][k]` scores class `k` for ensemble member `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<Vec<ClassScorer>>,
}

impl Ensemble {
    pub fn member_probability(&self, member: usize, class: usize, x: &[f32]) -> f64 {
        self.members[member][class].predict(x)
    }

    pub fn mean_probability(&self, class: usize, x: &[f32]) -> f64 {
        self.members
            .iter()
            .map(|m| m[class].predict(x))
            .sum::<f64>()
            / self.members.len() as f64
    }

    /// Number of (member, class) scorers that fell back to the prior.
    pub fn prior_fallbacks(&self) -> usize {
        self.members
            .iter()
            .flatten()
            .filter(|s| matches!(s, ClassScorer::Prior(_)))
            .count()
    }
}

/// Trainer adapter over a synthetic pool. Duplicate entries in the training
/// list are kept, so re-selected images weigh more.
pub struct ToyTrainer {
    pool: Arc<SynthPool>,
    index: HashMap<String, usize>,
    options: TrainerOptions,
    calls: u64,
}

impl ToyTrainer {
    pub fn new(pool: Arc<SynthPool>, options: TrainerOptions) -> Self {
        let index = pool
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Self {
            pool,
            index,
            options,
            calls: 0,
        }
    }

    pub fn pool(&self) -> &SynthPool {
        &self.pool
    }

    fn lookup(&self, id: &str) -> Result<usize, BoxError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| format!("image {id:?} is not in the synthetic pool").into())
    }

    /// Fits the ensemble on pool indices (repeats allowed).
    pub fn fit(&mut self, rows: &[usize]) -> Ensemble {
        let spec = &self.pool.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.options.seed ^ self.calls.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        self.calls += 1;
        let members = (0..spec.members)
            .map(|_| {
                let sample: Vec<usize> = if self.options.bootstrap && !rows.is_empty() {
                    (0..rows.len())
                        .map(|_| rows[rng.random_range(0..rows.len())])
                        .collect()
                } else {
                    rows.to_vec()
                };
                let features: Vec<&[f32]> = sample
                    .iter()
                    .map(|&i| self.pool.latents[i].as_slice())
                    .collect();
                (0..spec.classes)
                    .map(|k| {
                        let labels: Vec<bool> =
                            sample.iter().map(|&i| self.pool.labels[i][k]).collect();
                        let positives = labels.iter().filter(|&&l| l).count();
                        if positives == 0 || positives == labels.len() {
                            ClassScorer::Prior(spec.prevalence[k])
                        } else {
                            ClassScorer::Logistic(fit_logistic(&features, &labels, self.options.l2))
                        }
                    })
                    .collect()
            })
            .collect();
        Ensemble { members }
    }

    /// Prediction stack for pool image `i`. With a 1×1 map the value is the
    /// member probability; larger maps spread it with a smooth per-image
    /// pattern `p + A·p(1−p)·φ(h, w)`, `|φ| ≤ 1`, shared by all members.
    pub fn stack(&self, model: &Ensemble, i: usize) -> PredictionStack {
        let spec = &self.pool.spec;
        let (e_count, c_count, h, w) = (spec.members, spec.classes, spec.height, spec.width);
        let x = &self.pool.latents[i];
        let mut values = Vec::with_capacity(e_count * c_count * h * w);
        let patterns: Vec<(Vec<f64>, Vec<f64>)> = if h * w > 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(
                spec.seed ^ (i as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03),
            );
            (0..c_count)
                .map(|_| (wave(h, &mut rng), wave(w, &mut rng)))
                .collect()
        } else {
            Vec::new()
        };
        for e in 0..e_count {
            if h * w == 1 {
                values.extend((0..c_count).map(|k| model.member_probability(e, k, x) as f32));
                continue;
            }
            for (k, (rows, cols)) in patterns.iter().enumerate() {
                let p = model.member_probability(e, k, x);
                let spread = MAP_AMPLITUDE * p * (1.0 - p);
                for &a in rows {
                    for &b in cols {
                        values.push((p + spread * a * b).clamp(0.0, 1.0) as f32);
                    }
                }
            }
        }
        PredictionStack::from_vec(
            self.pool.ids[i].clone(),
            StackDims::new(e_count, c_count, h, w),
            values,
        )
        .expect("synthetic probabilities lie in [0, 1]")
    }

    /// Per-class average precision of the ensemble mean on the test split.
    pub fn test_average_precision(&self, model: &Ensemble) -> Vec<Option<f64>> {
        (0..self.pool.spec.classes)
            .map(|k| {
                let scores: Vec<f64> = self
                    .pool
                    .test_latents
                    .iter()
                    .map(|x| model.mean_probability(k, x))
                    .collect();
                let labels: Vec<bool> = self.pool.test_labels.iter().map(|l| l[k]).collect();
                average_precision(&scores, &labels)
            })
            .collect()
    }
}

fn wave(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cycles = f64::from(rng.random_range(1..=2u8));
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    (0..n)
        .map(|j| (std::f64::consts::TAU * cycles * (j as f64 + 0.5) / n as f64 + phase).cos())
        .collect()
}

impl TrainerAdapter for ToyTrainer {
    type Model = Ensemble;

    fn train(&mut self, training_list: &[String]) -> Result<Ensemble, BoxError> {
        let rows = training_list
            .iter()
            .map(|id| self.lookup(id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.fit(&rows))
    }

    fn predict(
        &mut self,
        model: &Ensemble,
        ids: &[String],
    ) -> Result<Vec<PredictionStack>, BoxError> {
        ids.iter()
            .map(|id| Ok(self.stack(model, self.lookup(id)?)))
            .collect()
    }

    fn evaluate(&mut self, model: &Ensemble) -> Result<serde_json::Value, BoxError> {
        let ap = self.test_average_precision(model);
        let defined: Vec<f64> = ap.iter().flatten().copied().collect();
        let mean =
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Ok(serde_json::json!({
            "ap": ap,
            "mean_ap": mean,
            "prior_fallbacks": model.prior_fallbacks(),
        }))
    }
}

/// Average precision with tied scores handled as one threshold: each group
/// of equal scores adds its recall gain times the precision after the group.
/// `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let total = labels.iter().filter(|&&l| l).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_tp = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            group_tp += usize::from(labels[order[j]]);
            j += 1;
        }
        tp += group_tp;
        seen += j - i;
        ap += group_tp as f64 / total as f64 * (tp as f64 / seen as f64);
        i = j;
    }
    Some(ap)
}
