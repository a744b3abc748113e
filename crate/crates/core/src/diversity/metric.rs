use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SelectionError;
use crate::model::{check_embeddings, Embedding, ScoredImage};

/// Largest pool for which a dense `M×M` matrix is built.
pub const DENSE_POOL_CAP: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Squared Euclidean distance.
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`, in `[0, 2]`.
    Cosine,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "eucl" => Ok(Metric::Euclidean),
            "cosine" | "cos" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

/// Which metric to use and where the embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimilaritySpec {
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

pub(crate) fn squared_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    a.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

/// Cosine distance given precomputed norms. A zero vector is at distance 1
/// from everything except another zero vector.
pub(crate) fn cosine_distance(a: &[f32], b: &[f32], norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return if norm_a == norm_b { 0.0 } else { 1.0 };
    }
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    (1.0 - dot / (norm_a * norm_b)).clamp(0.0, 2.0)
}

/// Candidates for diversity sampling: ids in ascending order, with their
/// embedding rows and scores. Index order doubles as the id tie-break.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    scores: Vec<f64>,
}

impl CandidatePool {
    /// Joins scores with embeddings by image id. Every scored image needs an
    /// embedding; extra embeddings are ignored.
    pub fn new(embeddings: &[Embedding], scores: &[ScoredImage]) -> Result<Self, SelectionError> {
        let dim = check_embeddings(embeddings)?.unwrap_or(0);
        let mut by_id: HashMap<&str, &Embedding> = HashMap::with_capacity(embeddings.len());
        for e in embeddings {
            if by_id.insert(e.image_id.as_str(), e).is_some() {
                return Err(SelectionError::DuplicateId(e.image_id.clone()));
            }
        }
        let mut items: Vec<(&ScoredImage, &Embedding)> = Vec::with_capacity(scores.len());
        for s in scores {
            let e = by_id
                .get(s.image_id.as_str())
                .ok_or_else(|| SelectionError::MissingEmbedding(s.image_id.clone()))?;
            items.push((s, e));
        }
        items.sort_by(|a, b| a.0.image_id.cmp(&b.0.image_id));
        if let Some(w) = items
            .windows(2)
            .find(|w| w[0].0.image_id == w[1].0.image_id)
        {
            return Err(SelectionError::DuplicateId(w[0].0.image_id.clone()));
        }
        let mut pool = Self {
            ids: Vec::with_capacity(items.len()),
            dim,
            vectors: Vec::with_capacity(items.len() * dim),
            norms: Vec::with_capacity(items.len()),
            scores: Vec::with_capacity(items.len()),
        };
        for (s, e) in items {
            check_score(s)?;
            pool.ids.push(s.image_id.clone());
            pool.vectors.extend_from_slice(&e.vector);
            pool.norms.push(norm(&e.vector));
            pool.scores.push(s.score);
        }
        Ok(pool)
    }

    /// Pool from raw parts; ids must be unique. Rows are re-sorted by id.
    pub fn from_parts(
        ids: Vec<String>,
        vectors: Vec<Vec<f32>>,
        scores: Vec<f64>,
    ) -> Result<Self, SelectionError> {
        let embeddings: Vec<_> = ids
            .iter()
            .zip(vectors)
            .map(|(id, v)| Embedding::new(id.clone(), v))
            .collect();
        let scored: Vec<_> = ids
            .into_iter()
            .zip(scores)
            .map(|(id, s)| ScoredImage::new(id, s))
            .collect();
        Self::new(&embeddings, &scored)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, metric: Metric, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        match metric {
            Metric::Euclidean => squared_euclidean(self.vector(i), self.vector(j)),
            Metric::Cosine => {
                cosine_distance(self.vector(i), self.vector(j), self.norms[i], self.norms[j])
            }
        }
    }

    /// Distances from item `from` to every item.
    pub(crate) fn distances_from(&self, metric: Metric, from: usize, out: &mut [f64]) {
        out.par_iter_mut()
            .with_min_len(1024)
            .enumerate()
            .for_each(|(j, d)| *d = self.distance(metric, from, j));
    }

    /// Dense symmetric distance matrix; refuses pools above [`DENSE_POOL_CAP`].
    pub fn distance_matrix(&self, metric: Metric) -> Result<Array2<f64>, SelectionError> {
        if self.len() > DENSE_POOL_CAP {
            return Err(SelectionError::PoolTooLargeForDense(self.len()));
        }
        Ok(symmetric_matrix(self.len(), |i, j| {
            self.distance(metric, i, j)
        }))
    }
}

/// Fills the upper triangle in parallel and mirrors it, so the result is
/// exactly symmetric with a zero diagonal.
fn symmetric_matrix(m: usize, dist: impl Fn(usize, usize) -> f64 + Sync) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| ((i + 1)..m).map(|j| dist(i, j)).collect())
        .collect();
    let mut d = Array2::zeros((m, m));
    for (i, row) in rows.into_iter().enumerate() {
        for (offset, v) in row.into_iter().enumerate() {
            let j = i + 1 + offset;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

fn check_score(s: &ScoredImage) -> Result<(), SelectionError> {
    if !(s.score.is_finite() && s.score >= 0.0) {
        return Err(SelectionError::InvalidScore {
            id: s.image_id.clone(),
            score: s.score,
        });
    }
    Ok(())
}

/// Pairwise distance matrix over embeddings, in input order.
pub fn build_similarity(
    embeddings: &[Embedding],
    metric: Metric,
) -> Result<Array2<f64>, SelectionError> {
    if embeddings.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    check_embeddings(embeddings)?;
    if embeddings.len() > DENSE_POOL_CAP {
        return Err(SelectionError::PoolTooLargeForDense(embeddings.len()));
    }
    let norms: Vec<f64> = embeddings.iter().map(|e| norm(&e.vector)).collect();
    Ok(symmetric_matrix(embeddings.len(), |i, j| {
        let (a, b) = (&embeddings[i].vector, &embeddings[j].vector);
        match metric {
            Metric::Euclidean => squared_euclidean(a, b),
            Metric::Cosine => cosine_distance(a, b, norms[i], norms[j]),
        }
    }))
}
