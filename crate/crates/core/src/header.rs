//! `#`-prefixed provenance headers for the line-oriented text outputs, plus
//! content digests of inputs.

use std::fs::File;
use std::io::{self, BufRead, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::ModelError;

/// Ordered `key=value` metadata written ahead of a text file's records.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Header {
    pub kind: String,
    pub entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string().replace(['\n', '\r'], " ");
        self.entries.push((key, value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_to(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "# alquery {}", self.kind)?;
        for (k, v) in &self.entries {
            writeln!(out, "# {k}={v}")?;
        }
        Ok(())
    }

    /// Header lines without the leading `# `, as used by manifest writers.
    pub fn lines(&self) -> Vec<String> {
        std::iter::once(format!("alquery {}", self.kind))
            .chain(self.entries.iter().map(|(k, v)| format!("{k}={v}")))
            .collect()
    }
}

/// Splits a text file into its header and the remaining record lines.
/// Header lines are the leading run of lines starting with `#`.
pub fn split_header(reader: impl BufRead) -> io::Result<(Header, Vec<(usize, String)>)> {
    let mut header = Header::default();
    let mut records = Vec::new();
    let mut in_header = true;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if in_header {
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim_start();
                if let Some(kind) = rest.strip_prefix("alquery ") {
                    header.kind = kind.trim().to_string();
                } else if let Some((k, v)) = rest.split_once('=') {
                    header.entries.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            in_header = false;
        }
        if !line.trim().is_empty() {
            records.push((n + 1, line));
        }
    }
    Ok((header, records))
}

/// SHA-256 of a file's bytes, hex encoded. Streams the file.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String, ModelError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| ModelError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| ModelError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
