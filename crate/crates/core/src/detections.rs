//! Detection files: one JSON object per line with
//! `image_id, class, x, y, w, h, confidence`. Lines for one image may be
//! scattered; readers group them by image in order of first appearance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::model::{validate_id, Detection, DetectionSet};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    image_id: String,
    class: u32,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    confidence: f64,
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionSet>, ModelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ModelError::io(path, e))?;
    read_detections_from(BufReader::new(file), path)
}

pub fn read_detections_from(
    reader: impl BufRead,
    path: &Path,
) -> Result<Vec<DetectionSet>, ModelError> {
    let mut sets: Vec<DetectionSet> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let text = line.map_err(|e| ModelError::io(path, e))?;
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let malformed = |reason: String| ModelError::MalformedRecord {
            line: line_no,
            reason,
        };
        let parsed: DetectionLine =
            serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        validate_id(&parsed.image_id).map_err(malformed)?;
        let det = Detection {
            class: parsed.class,
            x: parsed.x,
            y: parsed.y,
            w: parsed.w,
            h: parsed.h,
            confidence: parsed.confidence,
        };
        det.validate().map_err(malformed)?;
        let slot = *index.entry(parsed.image_id.clone()).or_insert_with(|| {
            sets.push(DetectionSet {
                image_id: parsed.image_id.clone(),
                detections: Vec::new(),
            });
            sets.len() - 1
        });
        sets[slot].detections.push(det);
    }
    Ok(sets)
}

/// Detections for one image; an image absent from the file has none.
pub fn read_detection_set(
    path: impl AsRef<Path>,
    image_id: &str,
) -> Result<DetectionSet, ModelError> {
    let found = read_detections(path)?
        .into_iter()
        .find(|s| s.image_id == image_id)
        .unwrap_or_else(|| DetectionSet {
            image_id: image_id.to_string(),
            detections: Vec::new(),
        });
    Ok(found)
}

pub fn write_detections(
    path: impl AsRef<Path>,
    header: &[String],
    sets: &[DetectionSet],
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| ModelError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| ModelError::io(path, e);
    for line in header {
        writeln!(out, "# {line}").map_err(io)?;
    }
    for set in sets {
        for d in &set.detections {
            d.validate()
                .map_err(|reason| ModelError::MalformedRecord { line: 0, reason })?;
            let line = DetectionLine {
                image_id: set.image_id.clone(),
                class: d.class,
                x: d.x,
                y: d.y,
                w: d.w,
                h: d.h,
                confidence: d.confidence,
            };
            serde_json::to_writer(&mut out, &line).map_err(|e| io(e.into()))?;
            out.write_all(b"\n").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}
