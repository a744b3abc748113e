//! Little-endian binary files for prediction stacks (`ALPM`) and embeddings (`ALEM`).
//!
//! ```text
//! ALPM: "ALPM" | version u32 | E u32 | C u32 | H u32 | W u32 | E·C·H·W × f32
//! ALEM: "ALEM" | version u32 | D u32 | count u32 | count × (len u16 | id bytes | D × f32)
//! ```
//!
//! Payload order for `ALPM` is member-major, then class, then row-major pixels.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::ModelError;
use crate::model::{check_embeddings, validate_id, Embedding, PredictionStack, StackDims};

pub const PREDICTION_MAGIC: [u8; 4] = *b"ALPM";
pub const EMBEDDING_MAGIC: [u8; 4] = *b"ALEM";
pub const FORMAT_VERSION: u32 = 1;

fn eof_as_truncated(e: io::Error) -> Result<(), io::Error> {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Ok(())
    } else {
        Err(e)
    }
}

/// Wraps an I/O error from a reader, mapping short reads to `TruncatedPayload`.
fn read_err(path: &Path) -> impl Fn(io::Error) -> ModelError + '_ {
    move |e| match eof_as_truncated(e) {
        Ok(()) => ModelError::TruncatedPayload,
        Err(e) => ModelError::io(path, e),
    }
}

fn read_magic(reader: &mut impl Read, expected: [u8; 4], path: &Path) -> Result<(), ModelError> {
    let mut found = [0u8; 4];
    reader
        .read_exact(&mut found)
        .map_err(|e| match eof_as_truncated(e) {
            // Files shorter than the magic cannot be of this format at all.
            Ok(()) => ModelError::BadMagic { expected, found },
            Err(e) => ModelError::io(path, e),
        })?;
    if found != expected {
        return Err(ModelError::BadMagic { expected, found });
    }
    let version = reader.read_u32::<LittleEndian>().map_err(read_err(path))?;
    if version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    Ok(())
}

fn ensure_exhausted(reader: &mut impl Read, path: &Path) -> Result<(), ModelError> {
    let extra = io::copy(reader, &mut io::sink()).map_err(|e| ModelError::io(path, e))?;
    if extra > 0 {
        return Err(ModelError::TrailingData(extra));
    }
    Ok(())
}

fn header_u32(value: usize, what: &str) -> Result<u32, ModelError> {
    u32::try_from(value).map_err(|_| ModelError::TooLarge(format!("{what} = {value}")))
}

/// Reads one `ALPM` file; `image_id` labels the returned stack.
pub fn read_prediction_stack(
    path: impl AsRef<Path>,
    image_id: &str,
) -> Result<PredictionStack, ModelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ModelError::io(path, e))?;
    read_prediction_stack_from(&mut BufReader::with_capacity(1 << 16, file), image_id, path)
}

pub fn read_prediction_stack_from(
    reader: &mut impl Read,
    image_id: &str,
    path: &Path,
) -> Result<PredictionStack, ModelError> {
    read_magic(reader, PREDICTION_MAGIC, path)?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = reader.read_u32::<LittleEndian>().map_err(read_err(path))? as usize;
    }
    let dims = StackDims::new(dims[0], dims[1], dims[2], dims[3]);
    dims.validate()?;
    let len = dims
        .members
        .checked_mul(dims.classes)
        .and_then(|n| n.checked_mul(dims.height))
        .and_then(|n| n.checked_mul(dims.width))
        .ok_or_else(|| ModelError::TooLarge(format!("{dims:?}")))?;
    // Grow the buffer as data arrives so a corrupt header cannot force a huge allocation.
    let mut values = Vec::with_capacity(len.min(1 << 20));
    let mut chunk = vec![0f32; len.min(1 << 16)];
    while values.len() < len {
        let n = chunk.len().min(len - values.len());
        reader
            .read_f32_into::<LittleEndian>(&mut chunk[..n])
            .map_err(read_err(path))?;
        values.extend_from_slice(&chunk[..n]);
    }
    ensure_exhausted(reader, path)?;
    PredictionStack::from_vec(image_id, dims, values)
}

pub fn write_prediction_stack(
    path: impl AsRef<Path>,
    stack: &PredictionStack,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| ModelError::io(path, e))?;
    let mut out = BufWriter::with_capacity(1 << 16, file);
    write_prediction_stack_to(&mut out, stack)?;
    out.flush().map_err(|e| ModelError::io(path, e))
}

pub fn write_prediction_stack_to(
    out: &mut impl Write,
    stack: &PredictionStack,
) -> Result<(), ModelError> {
    let dims = stack.dims();
    let header = [
        header_u32(dims.members, "members")?,
        header_u32(dims.classes, "classes")?,
        header_u32(dims.height, "height")?,
        header_u32(dims.width, "width")?,
    ];
    let io = |e| ModelError::io("<stream>", e);
    out.write_all(&PREDICTION_MAGIC).map_err(io)?;
    out.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(io)?;
    for value in header {
        out.write_u32::<LittleEndian>(value).map_err(io)?;
    }
    let mut bytes = Vec::with_capacity(stack.values().len() * 4);
    for v in stack.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes).map_err(io)
}

/// Streams embeddings out of an `ALEM` file one at a time.
pub struct EmbeddingReader<R> {
    reader: R,
    dim: usize,
    remaining: usize,
    path: std::path::PathBuf,
    done: bool,
}

impl EmbeddingReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| ModelError::io(path, e))?;
        Self::new(BufReader::new(file), path)
    }
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(mut reader: R, path: &Path) -> Result<Self, ModelError> {
        read_magic(&mut reader, EMBEDDING_MAGIC, path)?;
        let dim = reader.read_u32::<LittleEndian>().map_err(read_err(path))? as usize;
        let count = reader.read_u32::<LittleEndian>().map_err(read_err(path))? as usize;
        if dim == 0 && count > 0 {
            return Err(ModelError::EmptyEmbedding("<header>".into()));
        }
        Ok(Self {
            reader,
            dim,
            remaining: count,
            path: path.to_path_buf(),
            done: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    fn read_one(&mut self) -> Result<Embedding, ModelError> {
        let path = self.path.as_path();
        let id_len = self
            .reader
            .read_u16::<LittleEndian>()
            .map_err(read_err(path))? as usize;
        let mut id = vec![0u8; id_len];
        self.reader.read_exact(&mut id).map_err(read_err(path))?;
        let id = String::from_utf8(id).map_err(|e| ModelError::InvalidId(e.to_string()))?;
        validate_id(&id).map_err(ModelError::InvalidId)?;
        let mut vector = vec![0f32; self.dim];
        self.reader
            .read_f32_into::<LittleEndian>(&mut vector)
            .map_err(read_err(path))?;
        if let Some(position) = vector.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { id, position });
        }
        Ok(Embedding::new(id, vector))
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<Embedding, ModelError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.remaining == 0 {
            self.done = true;
            return match ensure_exhausted(&mut self.reader, &self.path) {
                Ok(()) => None,
                Err(e) => Some(Err(e)),
            };
        }
        self.remaining -= 1;
        let item = self.read_one();
        if item.is_err() {
            self.done = true;
        }
        Some(item)
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<Embedding>, ModelError> {
    EmbeddingReader::open(path)?.collect()
}

pub fn write_embeddings(
    path: impl AsRef<Path>,
    embeddings: &[Embedding],
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| ModelError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_embeddings_to(&mut out, embeddings)?;
    out.flush().map_err(|e| ModelError::io(path, e))
}

pub fn write_embeddings_to(
    out: &mut impl Write,
    embeddings: &[Embedding],
) -> Result<(), ModelError> {
    let dim = check_embeddings(embeddings)?.unwrap_or(0);
    let io = |e| ModelError::io("<stream>", e);
    out.write_all(&EMBEDDING_MAGIC).map_err(io)?;
    out.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(io)?;
    out.write_u32::<LittleEndian>(header_u32(dim, "dimension")?)
        .map_err(io)?;
    out.write_u32::<LittleEndian>(header_u32(embeddings.len(), "count")?)
        .map_err(io)?;
    for e in embeddings {
        validate_id(&e.image_id).map_err(ModelError::InvalidId)?;
        let id_len = u16::try_from(e.image_id.len())
            .map_err(|_| ModelError::TooLarge(format!("id length {}", e.image_id.len())))?;
        out.write_u16::<LittleEndian>(id_len).map_err(io)?;
        out.write_all(e.image_id.as_bytes()).map_err(io)?;
        for v in &e.vector {
            out.write_f32::<LittleEndian>(*v).map_err(io)?;
        }
    }
    Ok(())
}
