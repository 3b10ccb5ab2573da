//! Small helpers shared by the on-disk artifact formats.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schema::Facility;

/// Where each pipeline stage reads and writes under the artifact root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactLayout {
    pub root: PathBuf,
}

impl ArtifactLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ArtifactLayout { root: root.into() }
    }

    /// Normalized scenario records (`ingest`).
    pub fn dataset(&self, facility: Facility) -> PathBuf {
        self.root.join("data").join(format!("{}.jsonl", facility.as_str()))
    }

    /// Field schema the dataset was normalized against.
    pub fn dataset_schema(&self, facility: Facility) -> PathBuf {
        self.root.join("data").join(format!("{}.schema.json", facility.as_str()))
    }

    pub fn ingest_summary(&self) -> PathBuf {
        self.root.join("data").join("summary.json")
    }

    /// Labelled training pairs (`pairs`).
    pub fn pairs(&self, facility: Facility) -> PathBuf {
        self.root.join("pairs").join(format!("{}.jsonl", facility.as_str()))
    }

    /// Fine-tuned backbone directory (`finetune`).
    pub fn backbone(&self, facility: Facility) -> PathBuf {
        self.root.join("backbones").join(facility.as_str())
    }

    /// Predictor bundle (`train`).
    pub fn model(&self, facility: Facility) -> PathBuf {
        self.root.join("models").join(facility.as_str())
    }

    /// Report bundle (`evaluate`, `report`).
    pub fn report(&self, facility: Facility, label: &str) -> PathBuf {
        self.root.join("reports").join(facility.as_str()).join(label)
    }

    /// Fails with a message naming the command that produces `path`.
    pub fn require(&self, path: PathBuf, command: &'static str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact { path, command })
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".into());
    let tmp = parent.join(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::CorruptArtifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64s_from_le_bytes(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::CorruptArtifact {
            path: path.to_path_buf(),
            message: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Reads a binary payload and checks it against the digest recorded in a manifest.
pub fn read_verified(path: &Path, expected_digest: &str) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let actual = sha256_hex(&bytes);
    if actual != expected_digest {
        return Err(Error::DigestMismatch {
            path: path.to_path_buf(),
            expected: expected_digest.to_string(),
            actual,
        });
    }
    Ok(bytes)
}
