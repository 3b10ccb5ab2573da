//! Semantic encoding of pseudo sentences.
//!
//! Two backbones are built in: a frozen signed n-gram hashing encoder and a
//! trainable hashed-n-gram embedding table. Both are deterministic and run
//! offline. Manifests may also name a pretrained transformer checkpoint; such
//! a backbone is recognized but cannot be loaded by this build.

mod cache;
mod hashing;
mod projected;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cache::EmbeddingCache;
pub use hashing::{tokenize, HashingConfig};
pub use projected::{EpochLoss, FineTuneConfig, FineTuneOutcome, ProjectedConfig, ProjectedEncoder};

use crate::artifact::{self, sha256_hex};
use crate::error::{Error, Result};
use crate::scenario_text::PseudoSentence;
use crate::spsf::ScenarioPair;

pub const BACKBONE_FORMAT: &str = "cmf-backbone/1";
pub const DEFAULT_TRANSFORMER_CHECKPOINT: &str = "sentence-transformers/all-mpnet-base-v2";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    PretrainedTransformer,
    Hashing,
    Projected,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderBackbone {
    Hashing(HashingConfig),
    Projected(ProjectedEncoder),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn raw(values: Vec<f64>) -> Self {
        EmbeddingVector {
            values,
            normalized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<EmbeddingVector> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Domain("cannot normalize a zero vector".into()));
        }
        Ok(EmbeddingVector {
            values: self.values.iter().map(|v| v / n).collect(),
            normalized: true,
        })
    }
}

/// Inner product of the l2-normalized vectors.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector is undefined".into()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

impl EncoderBackbone {
    pub fn hashing(dimension: usize) -> Self {
        EncoderBackbone::Hashing(HashingConfig {
            dimension,
            ..HashingConfig::default()
        })
    }

    pub fn projected(config: ProjectedConfig) -> Result<Self> {
        Ok(EncoderBackbone::Projected(ProjectedEncoder::new(config)?))
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            EncoderBackbone::Hashing(_) => BackboneKind::Hashing,
            EncoderBackbone::Projected(_) => BackboneKind::Projected,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            EncoderBackbone::Hashing(c) => c.dimension,
            EncoderBackbone::Projected(p) => p.dimension(),
        }
    }

    pub fn trainable(&self) -> bool {
        matches!(self, EncoderBackbone::Projected(_))
    }

    /// Changes whenever the embedding function changes, including after fine-tuning.
    pub fn identifier(&self) -> String {
        match self {
            EncoderBackbone::Hashing(c) => c.identifier(),
            EncoderBackbone::Projected(p) => p.identifier(),
        }
    }

    pub fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("cannot encode an empty sentence".into()));
        }
        let values = match self {
            EncoderBackbone::Hashing(c) => c.dense_features(text),
            EncoderBackbone::Projected(p) => p.embed(text),
        };
        Ok(EmbeddingVector::raw(values))
    }

    /// Unnormalized embedding; normalization happens inside [`cosine_similarity`].
    pub fn encode(&self, sentence: &PseudoSentence) -> Result<EmbeddingVector> {
        self.encode_text(&sentence.text)
    }

    pub fn encode_batch(&self, sentences: &[PseudoSentence]) -> Result<Vec<EmbeddingVector>> {
        sentences.iter().map(|s| self.encode(s)).collect()
    }
}

/// Returns a new backbone fine-tuned on `pairs`; `backbone` is left untouched.
pub fn fine_tune(
    backbone: &EncoderBackbone,
    pairs: &[ScenarioPair],
    sentences: &HashMap<String, PseudoSentence>,
    config: &FineTuneConfig,
) -> Result<(EncoderBackbone, FineTuneOutcome)> {
    match backbone {
        EncoderBackbone::Hashing(_) => Err(Error::NotTrainable),
        EncoderBackbone::Projected(p) => {
            let outcome = projected::fine_tune_projected(p, pairs, sentences, config)?;
            Ok((EncoderBackbone::Projected(outcome.encoder.clone()), outcome))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneManifest {
    pub format: String,
    pub kind: BackboneKind,
    pub identifier: String,
    pub dimension: usize,
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hashing: Option<HashingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projected: Option<ProjectedConfig>,
}

const MANIFEST_FILE: &str = "manifest.json";
const WEIGHTS_FILE: &str = "weights.bin";

pub fn save_backbone(backbone: &EncoderBackbone, dir: &Path) -> Result<BackboneManifest> {
    let manifest = match backbone {
        EncoderBackbone::Hashing(c) => BackboneManifest {
            format: BACKBONE_FORMAT.into(),
            kind: BackboneKind::Hashing,
            identifier: c.identifier(),
            dimension: c.dimension,
            digest: sha256_hex(c.identifier().as_bytes()),
            hashing: Some(*c),
            projected: None,
        },
        EncoderBackbone::Projected(p) => {
            let bytes = p.weights_bytes();
            artifact::atomic_write(&dir.join(WEIGHTS_FILE), &bytes)?;
            BackboneManifest {
                format: BACKBONE_FORMAT.into(),
                kind: BackboneKind::Projected,
                identifier: p.identifier(),
                dimension: p.dimension(),
                digest: sha256_hex(&bytes),
                hashing: None,
                projected: Some(*p.config()),
            }
        }
    };
    artifact::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Loads a backbone directory, verifying its digest and, when given, the
/// expected embedding dimension.
pub fn load_backbone(dir: &Path, expected_dimension: Option<usize>) -> Result<EncoderBackbone> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: BackboneManifest = artifact::read_json(&manifest_path)?;
    let corrupt = |message: &str| Error::CorruptArtifact {
        path: manifest_path.clone(),
        message: message.to_string(),
    };
    if manifest.format != BACKBONE_FORMAT {
        return Err(corrupt(&format!("unsupported format tag {}", manifest.format)));
    }
    if let Some(m) = expected_dimension {
        if m != manifest.dimension {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: manifest.dimension,
            });
        }
    }
    let backbone = match manifest.kind {
        BackboneKind::PretrainedTransformer => {
            return Err(Error::BackboneNotLoaded(format!(
                "pretrained transformer checkpoint `{}` cannot be run by this build; \
                 use a hashing or projected backbone",
                manifest.identifier
            )))
        }
        BackboneKind::Hashing => {
            let cfg = manifest.hashing.ok_or_else(|| corrupt("missing hashing config"))?;
            let actual = sha256_hex(cfg.identifier().as_bytes());
            if actual != manifest.digest {
                return Err(Error::DigestMismatch {
                    path: manifest_path,
                    expected: manifest.digest,
                    actual,
                });
            }
            EncoderBackbone::Hashing(cfg)
        }
        BackboneKind::Projected => {
            let cfg = manifest.projected.ok_or_else(|| corrupt("missing projected config"))?;
            let weights_path = dir.join(WEIGHTS_FILE);
            let bytes = artifact::read_verified(&weights_path, &manifest.digest)?;
            let table = artifact::f64s_from_le_bytes(&weights_path, &bytes)?;
            EncoderBackbone::Projected(ProjectedEncoder::from_parts(cfg, table)?)
        }
    };
    if backbone.dimension() != manifest.dimension {
        return Err(corrupt("manifest dimension disagrees with backbone config"));
    }
    Ok(backbone)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::spsf::safety_similarity;

    fn sentence(id: &str, text: &str) -> PseudoSentence {
        PseudoSentence {
            source_id: id.into(),
            text: text.into(),
            field_count: 1,
        }
    }

    fn small_projected() -> EncoderBackbone {
        EncoderBackbone::projected(ProjectedConfig {
            input_dim: 512,
            dimension: 32,
            max_ngram: 2,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn hashing_encode_is_deterministic() {
        let b = EncoderBackbone::hashing(256);
        let s = sentence("1", "Install rumble strips, Rural");
        assert_eq!(b.encode(&s).unwrap(), b.encode(&s).unwrap());
        assert_eq!(b.encode(&s).unwrap().len(), 256);
    }

    #[test]
    fn distinct_texts_differ() {
        let b = EncoderBackbone::hashing(256);
        let a = b.encode_text("a").unwrap();
        let c = b.encode_text("b").unwrap();
        assert!(a.values.iter().zip(&c.values).any(|(x, y)| x != y));
    }

    #[test]
    fn batch_shape() {
        let b = EncoderBackbone::hashing(256);
        let batch: Vec<_> = (0..100)
            .map(|i| sentence(&i.to_string(), &format!("countermeasure {i}")))
            .collect();
        let out = b.encode_batch(&batch).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|v| v.len() == 256));
    }

    #[test]
    fn empty_sentence_is_rejected() {
        let b = EncoderBackbone::hashing(16);
        assert!(matches!(b.encode_text("  "), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn cosine_examples() {
        let v = |x: &[f64]| EmbeddingVector::raw(x.to_vec());
        assert!((cosine_similarity(&v(&[0.3, -2.0, 1.0]), &v(&[0.3, -2.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0, 0.0]), &v(&[0.0, 1.0, 0.0])).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, -1.0])).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&v(&[2.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
    }

    #[test]
    fn cosine_errors() {
        let v = |x: &[f64]| EmbeddingVector::raw(x.to_vec());
        assert!(matches!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn normalized_has_unit_norm() {
        let v = EmbeddingVector::raw(vec![3.0, 4.0, 12.0]).normalized().unwrap();
        assert!(v.normalized);
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_bounded_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 8),
            b in proptest::collection::vec(-10.0f64..10.0, 8),
            lambda in 1e-3f64..1e3,
        ) {
            let va = EmbeddingVector::raw(a.clone());
            let vb = EmbeddingVector::raw(b);
            prop_assume!(va.norm() > 1e-6 && vb.norm() > 1e-6);
            let ab = cosine_similarity(&va, &vb).unwrap();
            prop_assert_eq!(ab, cosine_similarity(&vb, &va).unwrap());
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            let scaled = EmbeddingVector::raw(a.iter().map(|x| x * lambda).collect());
            prop_assert!((cosine_similarity(&scaled, &vb).unwrap() - ab).abs() < 1e-12);
        }
    }

    #[test]
    fn hashing_backbone_is_not_trainable() {
        let pairs = vec![ScenarioPair {
            left_id: "a".into(),
            right_id: "b".into(),
            gold_score: safety_similarity(0.5, 0.6).unwrap(),
            delta: 0.1,
        }];
        let sentences = HashMap::from([
            ("a".to_string(), sentence("a", "x")),
            ("b".to_string(), sentence("b", "y")),
        ]);
        let err = fine_tune(&EncoderBackbone::hashing(8), &pairs, &sentences, &FineTuneConfig::default())
            .unwrap_err();
        assert_eq!(err.to_string(), "backbone not trainable");
    }

    #[test]
    fn empty_pairs_are_rejected() {
        let err = fine_tune(&small_projected(), &[], &HashMap::new(), &FineTuneConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let b = small_projected();
        let pairs = vec![ScenarioPair {
            left_id: "a".into(),
            right_id: "b".into(),
            gold_score: safety_similarity(0.5, 1.6).unwrap(),
            delta: 1.1,
        }];
        let sentences = HashMap::from([
            ("a".to_string(), sentence("a", "add lighting")),
            ("b".to_string(), sentence("b", "remove lighting")),
        ]);
        let cfg = FineTuneConfig {
            epochs: 0,
            ..FineTuneConfig::default()
        };
        let (tuned, outcome) = fine_tune(&b, &pairs, &sentences, &cfg).unwrap();
        assert!(outcome.history.is_empty());
        assert_eq!(tuned.encode_text("add lighting").unwrap(), b.encode_text("add lighting").unwrap());
        assert_eq!(tuned.identifier(), b.identifier());
    }

    #[test]
    fn hashing_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = EncoderBackbone::hashing(64);
        save_backbone(&b, dir.path()).unwrap();
        let loaded = load_backbone(dir.path(), Some(64)).unwrap();
        assert_eq!(loaded.encode_text("x").unwrap(), b.encode_text("x").unwrap());
    }

    #[test]
    fn projected_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let b = small_projected();
        let manifest = save_backbone(&b, dir.path()).unwrap();
        assert_eq!(manifest.dimension, 32);
        let loaded = load_backbone(dir.path(), None).unwrap();
        assert_eq!(loaded, b);
        assert_eq!(loaded.identifier(), b.identifier());
    }

    #[test]
    fn truncated_weights_fail_digest_check() {
        let dir = tempfile::tempdir().unwrap();
        save_backbone(&small_projected(), dir.path()).unwrap();
        let w = dir.path().join(WEIGHTS_FILE);
        let bytes = std::fs::read(&w).unwrap();
        std::fs::write(&w, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_backbone(dir.path(), None).unwrap_err();
        assert!(matches!(err, Error::DigestMismatch { .. }), "{err}");
        assert!(err.to_string().contains("digest mismatch"));
    }

    #[test]
    fn tampered_hashing_manifest_fails_digest_check() {
        let dir = tempfile::tempdir().unwrap();
        save_backbone(&EncoderBackbone::hashing(64), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).unwrap().replace("\"max_ngram\": 2", "\"max_ngram\": 1");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_backbone(dir.path(), None),
            Err(Error::DigestMismatch { .. })
        ));
    }

    #[test]
    fn loader_rejects_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_backbone(&EncoderBackbone::hashing(64), dir.path()).unwrap();
        assert!(matches!(
            load_backbone(dir.path(), Some(128)),
            Err(Error::DimensionMismatch { expected: 128, actual: 64 })
        ));
    }

    #[test]
    fn transformer_manifest_is_recognized_but_not_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = BackboneManifest {
            format: BACKBONE_FORMAT.into(),
            kind: BackboneKind::PretrainedTransformer,
            identifier: DEFAULT_TRANSFORMER_CHECKPOINT.into(),
            dimension: 768,
            digest: String::new(),
            hashing: None,
            projected: None,
        };
        artifact::write_json(&dir.path().join(MANIFEST_FILE), &manifest).unwrap();
        assert!(matches!(
            load_backbone(dir.path(), None),
            Err(Error::BackboneNotLoaded(_))
        ));
    }
}
