//! Selection files: a header carrying `strategy`, `metric`, `seed` and `n`,
//! then `rank<TAB>image_id<TAB>score` with 1-based ranks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::SelectionBatch;
use crate::error::ModelError;
use crate::header::{split_header, Header};
use crate::model::validate_id;

pub const SELECTION_KIND: &str = "selection v1";

/// Header describing `batch`; callers append input digests with [`Header::push`].
pub fn selection_header(batch: &SelectionBatch, requested: usize) -> Header {
    let mut h = Header::new(SELECTION_KIND)
        .with("strategy", &batch.strategy)
        .with("n", requested);
    if let Some(m) = batch.metric {
        h.push("metric", m);
    }
    if let Some(seed) = batch.seed {
        h.push("seed", seed);
    }
    h
}

pub fn write_selection(
    path: impl AsRef<Path>,
    header: &Header,
    batch: &SelectionBatch,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| ModelError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_selection_to(&mut out, header, batch)
        .and_then(|()| out.flush())
        .map_err(|e| ModelError::io(path, e))
}

pub fn write_selection_to(
    out: &mut impl Write,
    header: &Header,
    batch: &SelectionBatch,
) -> std::io::Result<()> {
    header.write_to(out)?;
    for (rank, (id, score)) in batch
        .selected
        .iter()
        .zip(&batch.scores_at_selection)
        .enumerate()
    {
        writeln!(out, "{}\t{id}\t{score}", rank + 1)?;
    }
    Ok(())
}

pub fn read_selection(path: impl AsRef<Path>) -> Result<(Header, SelectionBatch), ModelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ModelError::io(path, e))?;
    read_selection_from(BufReader::new(file), path)
}

pub fn read_selection_from(
    reader: impl BufRead,
    path: &Path,
) -> Result<(Header, SelectionBatch), ModelError> {
    let (header, lines) = split_header(reader).map_err(|e| ModelError::io(path, e))?;
    let header_error = |reason: String| ModelError::MalformedRecord { line: 0, reason };
    let mut batch = SelectionBatch::new(header.get("strategy").unwrap_or("unknown"));
    if let Some(m) = header.get("metric") {
        batch.metric = Some(m.parse().map_err(header_error)?);
    }
    if let Some(seed) = header.get("seed") {
        batch.seed = Some(
            seed.parse()
                .map_err(|e| header_error(format!("seed: {e}")))?,
        );
    }
    let mut seen = std::collections::HashSet::new();
    for (line, text) in lines {
        let malformed = |reason: String| ModelError::MalformedRecord { line, reason };
        let fields: Vec<&str> = text.split('\t').collect();
        let [rank, id, score] = fields[..] else {
            return Err(malformed(format!(
                "expected 3 fields, found {}",
                fields.len()
            )));
        };
        let rank: usize = rank.parse().map_err(|e| malformed(format!("rank: {e}")))?;
        if rank != batch.len() + 1 {
            return Err(malformed(format!("rank {rank} out of sequence")));
        }
        validate_id(id).map_err(malformed)?;
        if !seen.insert(id.to_string()) {
            return Err(ModelError::DuplicateId(id.to_string()));
        }
        let score: f64 = score
            .parse()
            .map_err(|e| malformed(format!("score: {e}")))?;
        batch.push(id, score);
    }
    Ok((header, batch))
}
