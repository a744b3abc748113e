//! Streaming pool scorer.
//!
//! Records are pulled from the manifest in fixed-size chunks, scored on a
//! worker pool, and emitted in manifest order. Memory is bounded by the chunk
//! and the stacks in flight, never by the pool size.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::{score_image, ScoreInput, ScoringConfig, ScoringError};
use crate::detections::read_detections;
use crate::error::ModelError;
use crate::manifest::resolve_ref;
use crate::model::{DetectionSet, ImageRecord, ScoredImage};
use crate::tensor::read_prediction_stack;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolOptions {
    pub workers: usize,
    /// Record per-image failures and continue instead of stopping at the first.
    pub keep_going: bool,
    pub chunk_size: usize,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            keep_going: false,
            chunk_size: 256,
        }
    }
}

#[derive(Debug)]
pub struct ScoreFailure {
    pub image_id: String,
    pub error: ScoringError,
}

#[derive(Debug, Default)]
pub struct PoolSummary {
    pub scored: usize,
    pub failures: Vec<ScoreFailure>,
}

type DetectionIndex = Arc<HashMap<String, DetectionSet>>;

/// Detection files are usually shared by many images; each is parsed once.
#[derive(Default)]
struct DetectionCache {
    files: Mutex<HashMap<PathBuf, DetectionIndex>>,
}

impl DetectionCache {
    fn get(&self, path: &Path) -> Result<DetectionIndex, ModelError> {
        if let Some(index) = self.files.lock().unwrap().get(path) {
            return Ok(Arc::clone(index));
        }
        let index: HashMap<_, _> = read_detections(path)?
            .into_iter()
            .map(|s| (s.image_id.clone(), s))
            .collect();
        let index = Arc::new(index);
        self.files
            .lock()
            .unwrap()
            .insert(path.to_path_buf(), Arc::clone(&index));
        Ok(index)
    }
}

fn score_record(
    record: &ImageRecord,
    base_dir: &Path,
    config: &ScoringConfig,
    detections: &DetectionCache,
) -> Result<ScoredImage, ScoringError> {
    let tag = |source: ModelError| ScoringError::Input {
        id: record.id.clone(),
        source,
    };
    if config.uses_detections() {
        let locator = record
            .detections_ref
            .as_ref()
            .ok_or_else(|| ScoringError::MissingRef {
                id: record.id.clone(),
                kind: "detections_ref",
            })?;
        let index = detections
            .get(&resolve_ref(base_dir, locator))
            .map_err(tag)?;
        let empty;
        let set = match index.get(&record.id) {
            Some(set) => set,
            None => {
                empty = DetectionSet {
                    image_id: record.id.clone(),
                    detections: Vec::new(),
                };
                &empty
            }
        };
        score_image(ScoreInput::Detections(set), config)
    } else {
        let locator = record
            .predictions_ref
            .as_ref()
            .ok_or_else(|| ScoringError::MissingRef {
                id: record.id.clone(),
                kind: "predictions_ref",
            })?;
        let stack =
            read_prediction_stack(resolve_ref(base_dir, locator), &record.id).map_err(tag)?;
        score_image(ScoreInput::Stack(&stack), config)
    }
}

/// Scores every record and hands results to `sink` in input order.
///
/// Manifest parse errors always abort. Per-image failures abort unless
/// `options.keep_going` is set, in which case they are collected in the
/// returned summary and the image is skipped.
pub fn score_pool_streaming<I, F>(
    records: I,
    base_dir: &Path,
    config: &ScoringConfig,
    options: &PoolOptions,
    mut sink: F,
) -> Result<PoolSummary, ScoringError>
where
    I: IntoIterator<Item = Result<ImageRecord, ModelError>>,
    F: FnMut(ScoredImage) -> std::io::Result<()>,
{
    config.validate()?;
    let workers = options.workers.max(1);
    let chunk_size = options.chunk_size.max(workers);
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ScoringError::InvalidConfig(format!("worker pool: {e}")))?;
    let detections = DetectionCache::default();
    let mut summary = PoolSummary::default();
    let mut records = records.into_iter();
    let mut chunk = Vec::with_capacity(chunk_size);
    loop {
        chunk.clear();
        for record in records.by_ref().take(chunk_size) {
            chunk.push(record?);
        }
        if chunk.is_empty() {
            break;
        }
        let results: Vec<_> = if workers == 1 {
            chunk
                .iter()
                .map(|r| score_record(r, base_dir, config, &detections))
                .collect()
        } else {
            threads.install(|| {
                chunk
                    .par_iter()
                    .with_max_len(1)
                    .map(|r| score_record(r, base_dir, config, &detections))
                    .collect()
            })
        };
        for (record, result) in chunk.iter().zip(results) {
            match result {
                Ok(scored) => {
                    sink(scored)?;
                    summary.scored += 1;
                }
                Err(error) if options.keep_going => summary.failures.push(ScoreFailure {
                    image_id: record.id.clone(),
                    error,
                }),
                Err(error) => return Err(error),
            }
        }
    }
    Ok(summary)
}

/// Collecting variant of [`score_pool_streaming`] for in-memory pools.
pub fn score_pool(
    records: &[ImageRecord],
    base_dir: &Path,
    config: &ScoringConfig,
    options: &PoolOptions,
) -> Result<(Vec<ScoredImage>, PoolSummary), ScoringError> {
    let mut out = Vec::with_capacity(records.len());
    let summary = score_pool_streaming(
        records.iter().cloned().map(Ok),
        base_dir,
        config,
        options,
        |s| {
            out.push(s);
            Ok(())
        },
    )?;
    Ok((out, summary))
}
