//! Pool manifests: one JSON object per line.
//!
//! Blank lines and lines starting with `#` are comments, which lets tools
//! prepend a provenance header without breaking the record stream.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::ModelError;
use crate::model::{validate_id, ImageRecord};

/// Streams manifest records without holding the pool in memory.
///
/// Per-line validation only; id uniqueness needs the whole pool and is
/// checked by [`load_manifest`].
pub struct ManifestReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    path: PathBuf,
}

impl ManifestReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| ModelError::io(path, e))?;
        Ok(Self::new(BufReader::new(file), path))
    }
}

impl<R: BufRead> ManifestReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
            path: path.into(),
        }
    }
}

impl<R: BufRead> Iterator for ManifestReader<R> {
    type Item = Result<ImageRecord, ModelError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(text) => text,
                Err(e) => return Some(Err(ModelError::io(&self.path, e))),
            };
            self.line += 1;
            let trimmed = text.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some(parse_record(trimmed, self.line));
        }
    }
}

fn parse_record(text: &str, line: usize) -> Result<ImageRecord, ModelError> {
    let record: ImageRecord =
        serde_json::from_str(text).map_err(|e| ModelError::MalformedRecord {
            line,
            reason: e.to_string(),
        })?;
    validate_id(&record.id).map_err(|reason| ModelError::MalformedRecord { line, reason })?;
    Ok(record)
}

/// Reads every record of a manifest, rejecting duplicate ids.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>, ModelError> {
    collect_unique(ManifestReader::open(path)?)
}

pub(crate) fn collect_unique(
    records: impl Iterator<Item = Result<ImageRecord, ModelError>>,
) -> Result<Vec<ImageRecord>, ModelError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in records {
        let record = record?;
        if !seen.insert(record.id.clone()) {
            return Err(ModelError::DuplicateId(record.id));
        }
        out.push(record);
    }
    Ok(out)
}

/// Writes records, one per line, after optional `#` header lines.
pub fn write_manifest(
    path: impl AsRef<Path>,
    header: &[String],
    records: &[ImageRecord],
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| ModelError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_manifest_to(&mut out, header, records).map_err(|e| ModelError::io(path, e))?;
    out.flush().map_err(|e| ModelError::io(path, e))
}

pub fn write_manifest_to(
    out: &mut impl Write,
    header: &[String],
    records: &[ImageRecord],
) -> std::io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    for record in records {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Resolves a locator relative to the directory holding the manifest.
pub fn resolve_ref(base_dir: &Path, locator: &Path) -> PathBuf {
    if locator.is_absolute() {
        locator.to_path_buf()
    } else {
        base_dir.join(locator)
    }
}
