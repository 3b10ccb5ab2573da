//! On-disk embedding cache, one file per backbone identifier.
//!
//! File layout: the magic `CMFEMB1\0`, the dimension as little-endian u32,
//! then records of a 32-byte SHA-256 sentence digest followed by `m`
//! little-endian f64 values. A fine-tuned backbone has a new identifier and
//! therefore starts from an empty cache.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{EmbeddingVector, EncoderBackbone};
use crate::artifact::{self, sha256};
use crate::error::{Error, Result};
use crate::scenario_text::PseudoSentence;

const MAGIC: &[u8; 8] = b"CMFEMB1\0";

#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    dimension: usize,
    entries: HashMap<[u8; 32], Vec<f64>>,
    dirty: bool,
}

fn file_name(identifier: &str) -> String {
    let safe: String = identifier
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.emb")
}

impl EmbeddingCache {
    /// Opens (or starts) the cache for `backbone` under `dir`. An unreadable
    /// cache file is discarded rather than trusted.
    pub fn open(dir: &Path, backbone: &EncoderBackbone) -> Result<Self> {
        let path = dir.join(file_name(&backbone.identifier()));
        let dimension = backbone.dimension();
        let entries = match std::fs::read(&path) {
            Ok(bytes) => match decode(&bytes, dimension) {
                Some(entries) => entries,
                None => {
                    tracing::warn!(path = %path.display(), "discarding unreadable embedding cache");
                    HashMap::new()
                }
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(EmbeddingCache {
            path,
            dimension,
            entries,
            dirty: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&mut self, backbone: &EncoderBackbone, sentence: &PseudoSentence) -> Result<EmbeddingVector> {
        if backbone.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: backbone.dimension(),
            });
        }
        let key = sha256(sentence.text.as_bytes());
        if let Some(v) = self.entries.get(&key) {
            return Ok(EmbeddingVector::raw(v.clone()));
        }
        let v = backbone.encode(sentence)?;
        self.entries.insert(key, v.values.clone());
        self.dirty = true;
        Ok(v)
    }

    pub fn flush(&mut self) -> Result<()> {
        if !self.dirty {
            return Ok(());
        }
        let mut keys: Vec<&[u8; 32]> = self.entries.keys().collect();
        keys.sort();
        let mut bytes = Vec::with_capacity(12 + keys.len() * (32 + 8 * self.dimension));
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        for k in keys {
            bytes.extend_from_slice(k);
            for v in &self.entries[k] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        artifact::atomic_write(&self.path, &bytes)?;
        self.dirty = false;
        Ok(())
    }
}

fn decode(bytes: &[u8], dimension: usize) -> Option<HashMap<[u8; 32], Vec<f64>>> {
    let body = bytes.strip_prefix(MAGIC)?;
    let (dim, body) = body.split_at_checked(4)?;
    if u32::from_le_bytes(dim.try_into().ok()?) as usize != dimension {
        return None;
    }
    let record = 32 + 8 * dimension;
    if body.len() % record != 0 {
        return None;
    }
    let mut entries = HashMap::with_capacity(body.len() / record);
    for chunk in body.chunks_exact(record) {
        let key: [u8; 32] = chunk[..32].try_into().ok()?;
        let values = chunk[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.insert(key, values);
    }
    Some(entries)
}
