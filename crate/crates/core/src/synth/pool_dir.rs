//! On-disk layout of a synthetic pool:
//!
//! ```text
//! synth.json          generator spec
//! manifest.jsonl      pool records (labeled flag marks the initial set)
//! embeddings.alem     pool embeddings
//! latents.alem        pool and test latents
//! truth.tsv           id, split, scene, per-class labels
//! detections.jsonl    one box per class the ensemble finds likely
//! predictions/*.alpm  ensemble prediction stacks
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::trainer::{ToyTrainer, TrainerOptions};
use super::{SynthError, SynthPool, SynthPoolSpec};
use crate::detections::write_detections;
use crate::error::ModelError;
use crate::header::{split_header, Header};
use crate::manifest::write_manifest;
use crate::model::{Detection, DetectionSet, Embedding, ImageRecord};
use crate::tensor::{read_embeddings, write_embeddings, write_prediction_stack};

/// Boxes are emitted for classes whose ensemble-mean probability reaches this.
const DETECTION_THRESHOLD: f64 = 0.05;
const WRITE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolDirOptions {
    /// Images flagged as labeled; the ensemble that writes the prediction
    /// stacks is trained on them.
    pub initial_labeled: usize,
    pub trainer: TrainerOptions,
}

/// File names inside a pool directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolFiles {
    pub root: PathBuf,
}

impl PoolFiles {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn spec(&self) -> PathBuf {
        self.root.join("synth.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.alem")
    }

    pub fn latents(&self) -> PathBuf {
        self.root.join("latents.alem")
    }

    pub fn truth(&self) -> PathBuf {
        self.root.join("truth.tsv")
    }

    pub fn detections(&self) -> PathBuf {
        self.root.join("detections.jsonl")
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.root.join("predictions")
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |e| ModelError::io(path, e)
}

/// Seeded uniform choice of the initial labeled images, returned as a mask.
fn initial_mask(pool: &SynthPool, count: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(pool.spec.seed ^ 0x5EED_1AB5);
    let mut mask = vec![false; pool.len()];
    for i in rand::seq::index::sample(&mut rng, pool.len(), count.min(pool.len())) {
        mask[i] = true;
    }
    mask
}

/// Writes the full pool directory. Identical inputs give identical bytes.
pub fn write_pool_dir(
    dir: impl AsRef<Path>,
    pool: Arc<SynthPool>,
    options: &PoolDirOptions,
) -> Result<PoolFiles, SynthError> {
    let files = PoolFiles::new(dir.as_ref());
    let pred_dir = files.predictions_dir();
    fs::create_dir_all(&pred_dir).map_err(io(&pred_dir))?;
    let spec = &pool.spec;
    let spec_json = serde_json::to_string(spec).expect("spec serialises");

    let spec_path = files.spec();
    fs::write(
        &spec_path,
        format!(
            "{}\n",
            serde_json::to_string_pretty(spec).expect("spec serialises")
        ),
    )
    .map_err(io(&spec_path))?;

    write_embeddings(files.embeddings(), &pool.embeddings)?;
    let latents: Vec<Embedding> = pool
        .ids
        .iter()
        .zip(&pool.latents)
        .chain(pool.test_ids.iter().zip(&pool.test_latents))
        .map(|(id, v)| Embedding::new(id.clone(), v.clone()))
        .collect();
    write_embeddings(files.latents(), &latents)?;
    write_truth(&files.truth(), &pool)?;

    let mask = initial_mask(&pool, options.initial_labeled);
    let mut trainer = ToyTrainer::new(pool.clone(), options.trainer);
    let rows: Vec<usize> = (0..pool.len()).filter(|&i| mask[i]).collect();
    let model = trainer.fit(&rows);

    let header = Header::new("manifest v1")
        .with("generator", "synth")
        .with("seed", spec.seed)
        .with("initial_labeled", rows.len())
        .with("bootstrap", options.trainer.bootstrap)
        .with("spec", &spec_json);
    let records: Vec<ImageRecord> = (0..pool.len())
        .map(|i| ImageRecord {
            sequence_id: Some(pool.scene_id(i)),
            predictions_ref: Some(
                PathBuf::from("predictions").join(format!("{}.alpm", pool.ids[i])),
            ),
            detections_ref: Some(PathBuf::from("detections.jsonl")),
            embedding_ref: Some(PathBuf::from("embeddings.alem")),
            labeled: mask[i],
            ..ImageRecord::new(pool.ids[i].clone())
        })
        .collect();
    write_manifest(files.manifest(), &header.lines(), &records)?;

    let indices: Vec<usize> = (0..pool.len()).collect();
    let mut detections = Vec::with_capacity(pool.len());
    for chunk in indices.chunks(WRITE_CHUNK) {
        let sets: Vec<Result<DetectionSet, ModelError>> = chunk
            .par_iter()
            .map(|&i| {
                let stack = trainer.stack(&model, i);
                write_prediction_stack(pred_dir.join(format!("{}.alpm", pool.ids[i])), &stack)?;
                let detections = (0..spec.classes)
                    .filter_map(|k| {
                        let p = model.mean_probability(k, &pool.latents[i]);
                        (p >= DETECTION_THRESHOLD).then_some(Detection {
                            class: k as u32,
                            x: 16.0 * k as f64,
                            y: 0.0,
                            w: 16.0,
                            h: 16.0,
                            confidence: p,
                        })
                    })
                    .collect();
                Ok(DetectionSet {
                    image_id: pool.ids[i].clone(),
                    detections,
                })
            })
            .collect();
        for s in sets {
            detections.push(s?);
        }
    }
    let det_header = Header::new("detections v1").with("seed", spec.seed);
    write_detections(files.detections(), &det_header.lines(), &detections)?;
    Ok(files)
}

fn write_truth(path: &Path, pool: &SynthPool) -> Result<(), ModelError> {
    let file = File::create(path).map_err(io(path))?;
    let mut out = BufWriter::new(file);
    let labels = |l: &[bool]| {
        l.iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(",")
    };
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        Header::new("truth v1")
            .with("seed", pool.spec.seed)
            .write_to(out)?;
        for i in 0..pool.len() {
            writeln!(
                out,
                "{}\tpool\t{}\t{}",
                pool.ids[i],
                pool.scene[i],
                labels(&pool.labels[i])
            )?;
        }
        for (id, l) in pool.test_ids.iter().zip(&pool.test_labels) {
            writeln!(out, "{id}\ttest\t-\t{}", labels(l))?;
        }
        out.flush()
    };
    write(&mut out).map_err(io(path))
}

/// Reads back the pool written by [`write_pool_dir`].
pub fn load_pool_dir(dir: impl AsRef<Path>) -> Result<SynthPool, SynthError> {
    let files = PoolFiles::new(dir.as_ref());
    let spec_path = files.spec();
    let spec_text = fs::read_to_string(&spec_path).map_err(io(&spec_path))?;
    let spec: SynthPoolSpec = serde_json::from_str(&spec_text).map_err(|e| {
        SynthError::Model(ModelError::MalformedRecord {
            line: e.line(),
            reason: format!("{}: {e}", spec_path.display()),
        })
    })?;
    spec.validate()?;
    let embeddings = read_embeddings(files.embeddings())?;
    let latents = read_embeddings(files.latents())?;
    let truth_path = files.truth();
    let reader = BufReader::new(File::open(&truth_path).map_err(io(&truth_path))?);
    let mut pool = SynthPool {
        spec,
        ids: Vec::new(),
        scene: Vec::new(),
        latents: Vec::new(),
        embeddings,
        labels: Vec::new(),
        test_ids: Vec::new(),
        test_latents: Vec::new(),
        test_labels: Vec::new(),
    };
    read_truth(reader, &truth_path, &mut pool)?;
    let mut latent_iter = latents.into_iter();
    for (n, id) in pool.ids.iter().chain(&pool.test_ids).enumerate() {
        let e = latent_iter
            .next()
            .ok_or_else(|| truncated(&files.latents(), n))?;
        if &e.image_id != id {
            return Err(SynthError::InvalidSpec(format!(
                "latent {n} is for {:?}, expected {id:?}",
                e.image_id
            )));
        }
        if n < pool.ids.len() {
            pool.latents.push(e.vector);
        } else {
            pool.test_latents.push(e.vector);
        }
    }
    if pool.embeddings.len() != pool.ids.len() || pool.ids.len() != pool.spec.pool_size {
        return Err(SynthError::InvalidSpec(
            "pool files disagree on the pool size".into(),
        ));
    }
    Ok(pool)
}

fn truncated(path: &Path, n: usize) -> SynthError {
    SynthError::InvalidSpec(format!("{} ends after {n} entries", path.display()))
}

fn read_truth(reader: impl BufRead, path: &Path, pool: &mut SynthPool) -> Result<(), ModelError> {
    let (_, lines) = split_header(reader).map_err(io(path))?;
    for (line, text) in lines {
        let malformed = |reason: String| ModelError::MalformedRecord { line, reason };
        let fields: Vec<&str> = text.split('\t').collect();
        let [id, split, scene, labels] = fields[..] else {
            return Err(malformed("expected 4 fields".into()));
        };
        let labels: Vec<bool> = labels
            .split(',')
            .map(|v| match v {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(malformed(format!("label {other:?}"))),
            })
            .collect::<Result<_, _>>()?;
        match split {
            "pool" => {
                pool.ids.push(id.to_string());
                pool.scene.push(
                    scene
                        .parse()
                        .map_err(|e| malformed(format!("scene: {e}")))?,
                );
                pool.labels.push(labels);
            }
            "test" => {
                pool.test_ids.push(id.to_string());
                pool.test_labels.push(labels);
            }
            other => return Err(malformed(format!("split {other:?}"))),
        }
    }
    Ok(())
}
