//! Score files: a provenance header, then `image_id<TAB>score[<TAB>c0,c1,...]`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::ModelError;
use crate::header::{split_header, Header};
use crate::model::{validate_id, ScoredImage};

/// Writes score records one at a time after the header.
pub struct ScoreFileWriter<W: Write> {
    out: W,
}

impl<W: Write> ScoreFileWriter<W> {
    pub fn new(mut out: W, header: &Header) -> std::io::Result<Self> {
        header.write_to(&mut out)?;
        Ok(Self { out })
    }

    pub fn write(&mut self, s: &ScoredImage) -> std::io::Result<()> {
        write!(self.out, "{}\t{}", s.image_id, s.score)?;
        if let Some(per_class) = &s.per_class_scores {
            self.out.write_all(b"\t")?;
            for (i, v) in per_class.iter().enumerate() {
                if i > 0 {
                    self.out.write_all(b",")?;
                }
                write!(self.out, "{v}")?;
            }
        }
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn write_scores_to(
    out: impl Write,
    header: &Header,
    scores: &[ScoredImage],
) -> std::io::Result<()> {
    let mut w = ScoreFileWriter::new(out, header)?;
    for s in scores {
        w.write(s)?;
    }
    w.out.flush()
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<(Header, Vec<ScoredImage>), ModelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ModelError::io(path, e))?;
    read_scores_from(BufReader::new(file), path)
}

pub fn read_scores_from(
    reader: impl BufRead,
    path: &Path,
) -> Result<(Header, Vec<ScoredImage>), ModelError> {
    let (header, lines) = split_header(reader).map_err(|e| ModelError::io(path, e))?;
    let mut scores = Vec::with_capacity(lines.len());
    for (line, text) in lines {
        let malformed = |reason: String| ModelError::MalformedRecord { line, reason };
        let mut fields = text.split('\t');
        let id = fields.next().unwrap_or_default();
        validate_id(id).map_err(malformed)?;
        let score: f64 = fields
            .next()
            .ok_or_else(|| malformed("missing score".into()))?
            .parse()
            .map_err(|e| malformed(format!("score: {e}")))?;
        if !(score.is_finite() && score >= 0.0) {
            return Err(malformed(format!(
                "score {score} is not a finite non-negative number"
            )));
        }
        let per_class_scores = match fields.next() {
            None | Some("") => None,
            Some(list) => Some(
                list.split(',')
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|e| malformed(format!("per-class score: {e}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        if fields.next().is_some() {
            return Err(malformed("too many fields".into()));
        }
        scores.push(ScoredImage {
            image_id: id.to_string(),
            score,
            per_class_scores,
        });
    }
    Ok((header, scores))
}
