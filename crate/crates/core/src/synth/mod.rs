//! Synthetic pools and a toy ensemble trainer for end-to-end runs.
//!
//! Each scene is a point in a latent space (8 dimensions by default). Class `k` is
//! present with its configured prevalence and, when present, shifts the
//! scene along axis `k`. A scene is repeated `redundancy` times with a small
//! jitter, like consecutive frames of a video.

mod logistic;
mod pool_dir;
mod trainer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Embedding;

pub use logistic::{fit_logistic, sigmoid, LogisticModel};
pub use pool_dir::{load_pool_dir, write_pool_dir, PoolDirOptions, PoolFiles};
pub use trainer::{average_precision, Ensemble, ToyTrainer, TrainerOptions};

pub const DEFAULT_LATENT_DIM: usize = 8;
/// Shift along a class axis when the class is present.
pub const CLASS_SEPARATION: f64 = 3.0;
/// Per-frame jitter around the scene latent. Frames of one scene stay far
/// closer to each other than to other scenes, yet are not exact copies.
pub const FRAME_JITTER: f64 = 0.4;
/// Observation noise added to latents to form embeddings.
pub const EMBEDDING_NOISE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic pool spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] crate::error::ModelError),
    #[error("{0}")]
    Training(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthPoolSpec {
    pub pool_size: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub members: usize,
    /// Per-class probability that a scene contains the class.
    pub prevalence: Vec<f64>,
    /// Frames per scene.
    pub redundancy: usize,
    /// Standard deviation of the scene latent around its class mean.
    pub noise: f64,
    /// Latent and embedding dimension; at least `classes`. Axes beyond the
    /// class axes carry only noise.
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Held-out scenes for evaluation (one frame each).
    pub test_size: usize,
    pub seed: u64,
}

fn default_latent_dim() -> usize {
    DEFAULT_LATENT_DIM
}

impl SynthPoolSpec {
    pub fn new(pool_size: usize, classes: usize) -> Self {
        Self {
            pool_size,
            classes,
            height: 1,
            width: 1,
            members: 6,
            prevalence: vec![0.3; classes],
            redundancy: 1,
            noise: 1.0,
            latent_dim: DEFAULT_LATENT_DIM,
            test_size: 1000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.classes == 0 || self.classes > self.latent_dim {
            return bad(format!(
                "classes must be in 1..={}, got {}",
                self.latent_dim, self.classes
            ));
        }
        if self.prevalence.len() != self.classes {
            return bad(format!(
                "{} prevalences for {} classes",
                self.prevalence.len(),
                self.classes
            ));
        }
        if let Some(p) = self.prevalence.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return bad(format!("prevalence {p} outside (0, 1]"));
        }
        if self.redundancy == 0 {
            return bad("redundancy must be at least 1".into());
        }
        if self.members == 0 || self.height == 0 || self.width == 0 {
            return bad("members, height and width must be at least 1".into());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!(
                "noise {} must be finite and non-negative",
                self.noise
            ));
        }
        Ok(())
    }

    pub fn scenes(&self) -> usize {
        self.pool_size.div_ceil(self.redundancy)
    }
}

/// A generated pool plus its held-out test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPool {
    pub spec: SynthPoolSpec,
    pub ids: Vec<String>,
    /// Scene index of each pool image.
    pub scene: Vec<usize>,
    pub latents: Vec<Vec<f32>>,
    pub embeddings: Vec<Embedding>,
    /// `labels[i][k]`: image `i` contains class `k`.
    pub labels: Vec<Vec<bool>>,
    pub test_ids: Vec<String>,
    pub test_latents: Vec<Vec<f32>>,
    pub test_labels: Vec<Vec<bool>>,
}

impl SynthPool {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn scene_id(&self, i: usize) -> String {
        format!("scene{:0w$}", self.scene[i], w = digits(self.spec.scenes()))
    }

    pub fn positives(&self, class: usize) -> usize {
        self.labels.iter().filter(|l| l[class]).count()
    }
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len().max(6)
}

fn draw_scene(spec: &SynthPoolSpec, rng: &mut ChaCha8Rng) -> (Vec<bool>, Vec<f64>) {
    let labels: Vec<bool> = spec
        .prevalence
        .iter()
        .map(|&p| rng.random::<f64>() < p)
        .collect();
    let mut latent = vec![0.0; spec.latent_dim];
    for (d, v) in latent.iter_mut().enumerate() {
        let noise: f64 = rng.sample(StandardNormal);
        *v = spec.noise * noise;
        if d < spec.classes && labels[d] {
            *v += CLASS_SEPARATION;
        }
    }
    (labels, latent)
}

fn jitter(base: &[f64], sd: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    base.iter()
        .map(|&v| {
            let n: f64 = rng.sample(StandardNormal);
            (v + sd * n) as f32
        })
        .collect()
}

/// Generates the pool deterministically from `spec.seed`.
pub fn generate_pool(spec: &SynthPoolSpec) -> Result<SynthPool, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = digits(spec.pool_size);
    let mut pool = SynthPool {
        spec: spec.clone(),
        ids: Vec::with_capacity(spec.pool_size),
        scene: Vec::with_capacity(spec.pool_size),
        latents: Vec::with_capacity(spec.pool_size),
        embeddings: Vec::with_capacity(spec.pool_size),
        labels: Vec::with_capacity(spec.pool_size),
        test_ids: Vec::with_capacity(spec.test_size),
        test_latents: Vec::with_capacity(spec.test_size),
        test_labels: Vec::with_capacity(spec.test_size),
    };
    for s in 0..spec.scenes() {
        let (labels, centre) = draw_scene(spec, &mut rng);
        let frames = spec.redundancy.min(spec.pool_size - s * spec.redundancy);
        for _ in 0..frames {
            let i = pool.ids.len();
            let latent = jitter(&centre, FRAME_JITTER, &mut rng);
            let as_f64: Vec<f64> = latent.iter().map(|&v| f64::from(v)).collect();
            let id = format!("img{i:0width$}");
            pool.embeddings.push(Embedding::new(
                id.clone(),
                jitter(&as_f64, EMBEDDING_NOISE, &mut rng),
            ));
            pool.ids.push(id);
            pool.scene.push(s);
            pool.latents.push(latent);
            pool.labels.push(labels.clone());
        }
    }
    let test_width = digits(spec.test_size);
    for t in 0..spec.test_size {
        let (labels, centre) = draw_scene(spec, &mut rng);
        pool.test_ids.push(format!("test{t:0test_width$}"));
        pool.test_latents
            .push(centre.iter().map(|&v| v as f32).collect());
        pool.test_labels.push(labels);
    }
    Ok(pool)
}
