//! Domain types shared by every stage of the pipeline.

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use ndarray::{Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// One entry of a pool manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_tags: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions_ref: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections_ref: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_ref: Option<PathBuf>,
    #[serde(default)]
    pub labeled: bool,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            sequence_id: None,
            class_tags: None,
            predictions_ref: None,
            detections_ref: None,
            embedding_ref: None,
            labeled: false,
        }
    }
}

/// Checks that an image id can be carried through the line-oriented text
/// formats: non-empty, no control characters, no leading `#`.
pub fn validate_id(id: &str) -> Result<(), String> {
    if id.is_empty() {
        return Err("empty image id".into());
    }
    if id.starts_with('#') {
        return Err(format!("image id {id:?} starts with '#'"));
    }
    if id.chars().any(char::is_control) {
        return Err(format!("image id {id:?} contains control characters"));
    }
    Ok(())
}

/// Ensemble probability maps for one image, laid out as
/// `[member, class, row, column]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStack {
    image_id: String,
    probs: Array4<f32>,
}

impl PredictionStack {
    /// Builds a stack from a flat member-major, class-major, row-major buffer.
    pub fn from_vec(
        image_id: impl Into<String>,
        dims: StackDims,
        values: Vec<f32>,
    ) -> Result<Self, ModelError> {
        dims.validate()?;
        if values.len() != dims.len() {
            return Err(ModelError::ShapeMismatch {
                expected: dims.len(),
                found: values.len(),
            });
        }
        if let Some(position) = values.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(ModelError::ValueOutOfRange { position });
        }
        let probs = Array4::from_shape_vec(dims.shape(), values).expect("length checked above");
        Ok(Self {
            image_id: image_id.into(),
            probs,
        })
    }

    pub fn from_array(image_id: impl Into<String>, probs: Array4<f32>) -> Result<Self, ModelError> {
        let (e, c, h, w) = probs.dim();
        let dims = StackDims::new(e, c, h, w);
        let values = probs.into_raw_vec_and_offset().0;
        Self::from_vec(image_id, dims, values)
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn dims(&self) -> StackDims {
        let (e, c, h, w) = self.probs.dim();
        StackDims::new(e, c, h, w)
    }

    pub fn members(&self) -> usize {
        self.probs.dim().0
    }

    pub fn classes(&self) -> usize {
        self.probs.dim().1
    }

    pub fn probs(&self) -> &Array4<f32> {
        &self.probs
    }

    /// The `H×W` map of one member for one class.
    pub fn map(&self, member: usize, class: usize) -> ArrayView2<'_, f32> {
        self.probs.slice(ndarray::s![member, class, .., ..])
    }

    /// Values in storage order.
    pub fn values(&self) -> &[f32] {
        self.probs
            .as_slice()
            .expect("stacks are always standard layout")
    }
}

/// Shape of a [`PredictionStack`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackDims {
    pub members: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
}

impl StackDims {
    pub fn new(members: usize, classes: usize, height: usize, width: usize) -> Self {
        Self {
            members,
            classes,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.members * self.classes * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.members, self.classes, self.height, self.width)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.members == 0 || self.classes == 0 || self.height == 0 || self.width == 0 {
            return Err(ModelError::EmptyDimension(*self));
        }
        Ok(())
    }
}

/// A single detector output box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(format!("non-positive box size {}x{}", self.w, self.h));
        }
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()) {
            return Err("non-finite box coordinates".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub image_id: String,
    pub vector: Vec<f32>,
}

impl Embedding {
    pub fn new(image_id: impl Into<String>, vector: Vec<f32>) -> Self {
        Self {
            image_id: image_id.into(),
            vector,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Checks the shared-dimension and finiteness invariants of an embedding set
/// and returns the common dimension (`None` for an empty set).
pub fn check_embeddings(embeddings: &[Embedding]) -> Result<Option<usize>, ModelError> {
    let Some(first) = embeddings.first() else {
        return Ok(None);
    };
    let dim = first.dim();
    if dim == 0 {
        return Err(ModelError::EmptyEmbedding(first.image_id.clone()));
    }
    for (index, e) in embeddings.iter().enumerate() {
        if e.dim() != dim {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                found: e.dim(),
                index,
            });
        }
        if let Some(position) = e.vector.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite {
                id: e.image_id.clone(),
                position,
            });
        }
    }
    Ok(Some(dim))
}

/// Informativeness of one image. Higher means more worth labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_scores: Option<Vec<f64>>,
}

impl ScoredImage {
    pub fn new(image_id: impl Into<String>, score: f64) -> Self {
        Self {
            image_id: image_id.into(),
            score,
            per_class_scores: None,
        }
    }
}

/// One iteration of the labeling loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub iteration: usize,
    /// Ids picked by the sampler this iteration, in selection order.
    pub selected_ids: Vec<String>,
    /// Ids that were unlabeled before this iteration.
    pub newly_labeled_count: usize,
    /// Cumulative number of ids labeled by the loop so far (initial set excluded).
    pub unique_image_count: usize,
    /// Cumulative number of selections so far, repeats included.
    pub cumulative_selected: usize,
    /// Size of the labeled set after this iteration, initial set included.
    pub labeled_total: usize,
    /// Length of the training list (labeled ids plus repeats) used for the
    /// model evaluated in this iteration.
    pub training_list_len: usize,
    pub metrics: serde_json::Value,
}

/// Labeled/unlabeled partition plus the selection ledger.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoopState {
    pub iteration: usize,
    pub initial_labeled: BTreeSet<String>,
    pub labeled_ids: BTreeSet<String>,
    pub unlabeled_ids: BTreeSet<String>,
    pub ledger: Vec<LedgerRecord>,
    pub initial_metrics: Option<serde_json::Value>,
}

impl LoopState {
    /// Verifies the partition and accounting invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some(id) = self.labeled_ids.intersection(&self.unlabeled_ids).next() {
            return Err(format!("{id} is both labeled and unlabeled"));
        }
        for record in &self.ledger {
            if record.unique_image_count > record.cumulative_selected {
                return Err(format!(
                    "iteration {}: unique {} exceeds cumulative selections {}",
                    record.iteration, record.unique_image_count, record.cumulative_selected
                ));
            }
            let distinct: HashSet<&String> = record.selected_ids.iter().collect();
            if distinct.len() != record.selected_ids.len() {
                return Err(format!(
                    "iteration {}: duplicate selections",
                    record.iteration
                ));
            }
        }
        Ok(())
    }
}
