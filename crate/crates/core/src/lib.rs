//! Query engine for pool-based active learning on object detection data.
//!
//! The pipeline has two query stages. [`scoring`] turns ensemble prediction
//! maps (or detector boxes) into one informativeness score per image, and
//! [`diversity`] picks a labeling batch from those scores, optionally spreading
//! the batch out in embedding space. [`active_loop`] repeats train, score,
//! select and label over several iterations, and [`synth`] provides a
//! synthetic pool and toy ensemble trainer to drive it end to end.

pub mod active_loop;
pub mod detections;
pub mod diversity;
pub mod error;
pub mod header;
pub mod manifest;
pub mod model;
pub mod scoring;
pub mod synth;
pub mod tensor;

pub use error::ModelError;
pub use model::{
    Detection, DetectionSet, Embedding, ImageRecord, LedgerRecord, LoopState, PredictionStack,
    ScoredImage, StackDims,
};
