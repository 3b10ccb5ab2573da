//! MLP artifact: `manifest.json` plus little-endian f64 `weights.bin` and
//! `normalization.bin` (means followed by scales), both digest-checked.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{MlpModel, OUTPUT_SCALE};
use super::{FeatureLayout, YEAR_BLOCK};
use crate::artifact;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "cmf-mlp/1";
const MANIFEST: &str = "manifest.json";
const WEIGHTS: &str = "weights.bin";
const NORMALIZATION: &str = "normalization.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub semantic_dim: usize,
    pub encoded_dim: usize,
    pub year_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: String,
    pub output_scale: f64,
    pub seed: u64,
    pub layout: FeatureLayout,
    pub weights_digest: String,
    pub normalization_digest: String,
}

pub fn save_model(model: &MlpModel, dir: &Path) -> Result<ModelManifest> {
    let weights = artifact::f64s_to_le_bytes(&model.flat_params());
    let mut norm = model.input_mean.clone();
    norm.extend_from_slice(&model.input_scale);
    let norm = artifact::f64s_to_le_bytes(&norm);
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        semantic_dim: model.layout.semantic_dim,
        encoded_dim: model.layout.encoded_dim,
        year_dim: YEAR_BLOCK,
        hidden_widths: model.widths.clone(),
        activation: "logistic".into(),
        output_scale: OUTPUT_SCALE,
        seed: model.seed,
        layout: model.layout.clone(),
        weights_digest: artifact::sha256_hex(&weights),
        normalization_digest: artifact::sha256_hex(&norm),
    };
    artifact::atomic_write(&dir.join(WEIGHTS), &weights)?;
    artifact::atomic_write(&dir.join(NORMALIZATION), &norm)?;
    artifact::write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_model(dir: &Path) -> Result<(MlpModel, ModelManifest)> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: ModelManifest = artifact::read_json(&manifest_path)?;
    let corrupt = |message: String| Error::CorruptArtifact {
        path: manifest_path.clone(),
        message,
    };
    if manifest.format != MODEL_FORMAT {
        return Err(corrupt(format!("unsupported format {:?}", manifest.format)));
    }
    if manifest.year_dim != YEAR_BLOCK
        || manifest.layout.semantic_dim != manifest.semantic_dim
        || manifest.layout.encoded_dim != manifest.encoded_dim
    {
        return Err(corrupt("block sizes disagree with the layout".into()));
    }
    if manifest.output_scale != OUTPUT_SCALE || manifest.activation != "logistic" {
        return Err(corrupt("unsupported output head".into()));
    }
    let weights_path = dir.join(WEIGHTS);
    let weights = artifact::read_verified(&weights_path, &manifest.weights_digest)?;
    let weights = artifact::f64s_from_le_bytes(&weights_path, &weights)?;
    let norm_path = dir.join(NORMALIZATION);
    let norm = artifact::read_verified(&norm_path, &manifest.normalization_digest)?;
    let norm = artifact::f64s_from_le_bytes(&norm_path, &norm)?;
    let n = manifest.layout.len();
    if norm.len() != 2 * n {
        return Err(Error::CorruptArtifact {
            path: norm_path,
            message: format!("expected {} values, found {}", 2 * n, norm.len()),
        });
    }
    let (mean, scale) = norm.split_at(n);
    let model = MlpModel::from_parameters(
        manifest.layout.clone(),
        &manifest.hidden_widths,
        &weights,
        mean.to_vec(),
        scale.to_vec(),
        manifest.seed,
    )
    .map_err(|e| Error::CorruptArtifact {
        path: weights_path,
        message: e.to_string(),
    })?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::FeatureVector;

    fn model() -> MlpModel {
        let layout = FeatureLayout {
            semantic_dim: 3,
            encoded_dim: 2,
            year_means: [2000.0, 2003.0],
        };
        let mut m = MlpModel::new_random(layout, &[4, 3], 5);
        m.input_mean = vec![0.1, 0.2, 0.3, 1.0, 0.9, 2001.0, 2004.0];
        m.input_scale = vec![1.0, 2.0, 0.5, 0.1, 3.0, 4.0, 1.0];
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save_model(&m, dir.path()).unwrap();
        let (back, manifest) = load_model(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest.hidden_widths, vec![4, 3]);
        let v = FeatureVector {
            values: vec![0.3, 0.1, -0.2, 0.9, 1.1, 1998.0, 2002.0],
            semantic_dim: 3,
            encoded_dim: 2,
        };
        assert_eq!(m.predict(&v).unwrap().to_bits(), back.predict(&v).unwrap().to_bits());
    }

    #[test]
    fn tampered_weights_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&model(), dir.path()).unwrap();
        let path = dir.path().join(WEIGHTS);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[3] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::DigestMismatch { .. })));
    }

    #[test]
    fn manifest_block_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        save_model(&model(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let mut manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        manifest["encoded_dim"] = serde_json::json!(7);
        std::fs::write(&path, serde_json::to_vec(&manifest).unwrap()).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::CorruptArtifact { .. })));
    }
}
