//! A trained per-facility predictor: backbone, target-encoder state and MLP,
//! plus the request/response types served over HTTP.
//!
//! On disk a predictor lives in `<artifacts>/<facility>/` as
//! `bundle.json`, `backbone/`, `target_encoder.json` and `model/`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::artifact::{self, sha256_hex};
use crate::encoder::{load_backbone, save_backbone, BackboneKind, EncoderBackbone};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, ScenarioRecord};
use crate::regressor::{self, assemble_features, FeatureLayout, FeatureVector, MlpModel, TrainConfig, TrainReport};
use crate::scenario_text::build_pseudo_sentence;
use crate::schema::{Facility, FieldSchema};
use crate::target_encoder::{self, TargetEncoderState};

pub const BUNDLE_FORMAT: &str = "cmf-predictor/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRequest {
    pub facility: Facility,
    pub countermeasure_name: String,
    #[serde(default)]
    pub context: BTreeMap<String, Option<String>>,
    #[serde(default)]
    pub start_year: Option<i32>,
    #[serde(default)]
    pub end_year: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nature {
    Reduction,
    Increase,
    Neutral,
}

impl Nature {
    pub fn of(cmf: f64) -> Nature {
        if cmf < 1.0 {
            Nature::Reduction
        } else if cmf > 1.0 {
            Nature::Increase
        } else {
            Nature::Neutral
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub cmf_hat: f64,
    pub nature: Nature,
    pub pseudo_sentence_echo: String,
    pub model_version: String,
}

/// What `GET /model` reports for one facility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub facility: Facility,
    pub model_version: String,
    pub backbone_kind: BackboneKind,
    pub backbone_identifier: String,
    pub semantic_dim: usize,
    pub encoded_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub context_fields: Vec<String>,
    pub vocabulary: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleManifest {
    format: String,
    facility: Facility,
    model_version: String,
    schema: FieldSchema,
}

#[derive(Debug, Clone)]
pub struct CmfPredictor {
    pub schema: FieldSchema,
    pub backbone: Arc<EncoderBackbone>,
    pub encoder: TargetEncoderState,
    pub model: MlpModel,
}

impl CmfPredictor {
    /// Fits the target encoder and the MLP on `train`; the backbone is used as is.
    pub fn fit(
        train: &Dataset,
        backbone: Arc<EncoderBackbone>,
        smoothing: f64,
        config: &TrainConfig,
    ) -> Result<(Self, TrainReport)> {
        let features = train.schema.categorical_fields.clone();
        let encoder = target_encoder::fit(train, &features, smoothing)?;
        let layout = FeatureLayout::fit(&train.records, backbone.dimension(), encoder.k());
        let mut partial = CmfPredictor {
            schema: train.schema.clone(),
            backbone,
            encoder,
            model: MlpModel::new_random(layout.clone(), &config.hidden_widths, config.seed),
        };
        let vectors = train
            .records
            .iter()
            .map(|r| partial.features(r))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<f64> = train.records.iter().map(|r| r.cmf).collect();
        let (model, report) = regressor::train(&layout, &vectors, &targets, config)?;
        partial.model = model;
        Ok((partial, report))
    }

    pub fn facility(&self) -> Facility {
        self.schema.facility
    }

    pub fn features(&self, record: &ScenarioRecord) -> Result<FeatureVector> {
        let sentence = build_pseudo_sentence(record, &self.schema);
        let embedding = self.backbone.encode(&sentence)?;
        let encoded = target_encoder::transform(&self.encoder, record);
        assemble_features(&self.model.layout, &embedding, &encoded, (record.start_year, record.end_year))
    }

    pub fn predict_records(&self, records: &[ScenarioRecord]) -> Result<Vec<f64>> {
        let rows = records
            .iter()
            .map(|r| self.features(r).map(|v| v.values))
            .collect::<Result<Vec<_>>>()?;
        self.model.predict_values(&rows)
    }

    /// Digest over every component that influences predictions.
    pub fn model_version(&self) -> String {
        let encoder = serde_json::to_vec(&self.encoder).expect("encoder state serializes");
        let mut material = self.backbone.identifier().into_bytes();
        material.extend_from_slice(&encoder);
        material.extend_from_slice(&artifact::f64s_to_le_bytes(&self.model.flat_params()));
        material.extend_from_slice(&artifact::f64s_to_le_bytes(&self.model.input_mean));
        material.extend_from_slice(&artifact::f64s_to_le_bytes(&self.model.input_scale));
        sha256_hex(&material)[..16].to_string()
    }

    /// Checks a request and turns it into a record (with a placeholder CMF).
    pub fn request_record(&self, request: &PredictionRequest) -> Result<ScenarioRecord> {
        if request.facility != self.facility() {
            return Err(Error::UnknownFacility(format!(
                "request is for {} but this model serves {}",
                request.facility,
                self.facility()
            )));
        }
        let name = request.countermeasure_name.trim();
        if name.is_empty() {
            return Err(Error::Domain("countermeasure_name must not be empty".into()));
        }
        let mut record = ScenarioRecord::new("request", self.facility(), name, 1.0)
            .with_years(request.start_year, request.end_year);
        for (field, value) in &request.context {
            if !self.schema.is_context_field(field) {
                return Err(Error::UnknownFeature(field.clone()));
            }
            if let Some(v) = value {
                if !self.schema.is_placeholder(v) {
                    record = record.with(field, v.trim());
                }
            }
        }
        Ok(record)
    }

    pub fn predict(&self, request: &PredictionRequest) -> Result<PredictionResponse> {
        Ok(self.predict_batch(std::slice::from_ref(request))?.remove(0))
    }

    pub fn predict_batch(&self, requests: &[PredictionRequest]) -> Result<Vec<PredictionResponse>> {
        let records = requests
            .iter()
            .map(|r| self.request_record(r))
            .collect::<Result<Vec<_>>>()?;
        let preds = self.predict_records(&records)?;
        let version = self.model_version();
        Ok(records
            .iter()
            .zip(preds)
            .map(|(r, cmf_hat)| PredictionResponse {
                cmf_hat,
                nature: Nature::of(cmf_hat),
                pseudo_sentence_echo: build_pseudo_sentence(r, &self.schema).text,
                model_version: version.clone(),
            })
            .collect())
    }

    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            facility: self.facility(),
            model_version: self.model_version(),
            backbone_kind: self.backbone.kind(),
            backbone_identifier: self.backbone.identifier(),
            semantic_dim: self.model.layout.semantic_dim,
            encoded_dim: self.model.layout.encoded_dim,
            hidden_widths: self.model.widths.clone(),
            context_fields: self.schema.context_fields().map(str::to_string).collect(),
            vocabulary: self.encoder.vocabulary(),
        }
    }

    /// Writes the predictor under `dir` (typically `<artifacts>/<facility>`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_backbone(&self.backbone, &dir.join("backbone"))?;
        self.encoder.save(&dir.join("target_encoder.json"))?;
        regressor::save_model(&self.model, &dir.join("model"))?;
        artifact::write_json(
            &dir.join("bundle.json"),
            &BundleManifest {
                format: BUNDLE_FORMAT.into(),
                facility: self.facility(),
                model_version: self.model_version(),
                schema: self.schema.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bundle_path = dir.join("bundle.json");
        let bundle: BundleManifest = artifact::read_json(&bundle_path)?;
        let corrupt = |message: String| Error::CorruptArtifact {
            path: bundle_path.clone(),
            message,
        };
        if bundle.format != BUNDLE_FORMAT {
            return Err(corrupt(format!("unsupported format {:?}", bundle.format)));
        }
        let (model, _) = regressor::load_model(&dir.join("model"))?;
        let backbone = load_backbone(&dir.join("backbone"), Some(model.layout.semantic_dim))?;
        let encoder = TargetEncoderState::load(&dir.join("target_encoder.json"))?;
        if encoder.k() != model.layout.encoded_dim {
            return Err(corrupt(format!(
                "target encoder has {} features but the model expects {}",
                encoder.k(),
                model.layout.encoded_dim
            )));
        }
        let predictor = CmfPredictor {
            schema: bundle.schema,
            backbone: Arc::new(backbone),
            encoder,
            model,
        };
        if predictor.model_version() != bundle.model_version {
            return Err(corrupt("model version does not match the stored components".into()));
        }
        Ok(predictor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema;
    use crate::synthetic::{generate, SyntheticConfig};

    fn small_predictor() -> CmfPredictor {
        let data = generate(&SyntheticConfig {
            records: 120,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            hidden_widths: vec![8, 4],
            epochs: 5,
            ..Default::default()
        };
        CmfPredictor::fit(&data, Arc::new(EncoderBackbone::hashing(32)), 100.0, &cfg)
            .unwrap()
            .0
    }

    fn request() -> PredictionRequest {
        PredictionRequest {
            facility: Facility::Roadway,
            countermeasure_name: "install lighting on curves".into(),
            context: BTreeMap::from([
                (schema::AREA_TYPE.to_string(), Some("Rural".to_string())),
                (schema::CRASH_TYPE.to_string(), None),
            ]),
            start_year: Some(2001),
            end_year: None,
        }
    }

    #[test]
    fn nature_thresholds() {
        assert_eq!(Nature::of(0.84), Nature::Reduction);
        assert_eq!(Nature::of(1.0), Nature::Neutral);
        assert_eq!(Nature::of(1.3), Nature::Increase);
    }

    #[test]
    fn predictions_survive_save_and_load() {
        let p = small_predictor();
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        let back = CmfPredictor::load(dir.path()).unwrap();
        let a = p.predict(&request()).unwrap();
        let b = back.predict(&request()).unwrap();
        assert_eq!(a.cmf_hat.to_bits(), b.cmf_hat.to_bits());
        assert_eq!(a.model_version, b.model_version);
        assert!(a.cmf_hat > 0.0 && a.cmf_hat < 2.0);
        assert_eq!(a.nature, Nature::of(a.cmf_hat));
        assert!(a.pseudo_sentence_echo.starts_with("install lighting on curves"));
    }

    #[test]
    fn unknown_context_field_is_rejected() {
        let p = small_predictor();
        let mut req = request();
        req.context.insert("crash_tpye".into(), Some("Angle".into()));
        assert!(matches!(p.predict(&req), Err(Error::UnknownFeature(f)) if f == "crash_tpye"));
        let mut req = request();
        req.countermeasure_name = "  ".into();
        assert!(p.predict(&req).is_err());
        let mut req = request();
        req.facility = Facility::Intersection;
        assert!(matches!(p.predict(&req), Err(Error::UnknownFacility(_))));
    }

    #[test]
    fn batch_preserves_order() {
        let p = small_predictor();
        let mut reqs = vec![request(), request(), request()];
        reqs[1].countermeasure_name = "add parking near schools".into();
        reqs[2].context.insert(schema::AREA_TYPE.into(), Some("Urban".into()));
        let batch = p.predict_batch(&reqs).unwrap();
        for (req, resp) in reqs.iter().zip(&batch) {
            assert_eq!(p.predict(req).unwrap(), *resp);
        }
    }

    #[test]
    fn request_json_rejects_unknown_top_level_fields() {
        let err = serde_json::from_str::<PredictionRequest>(
            r#"{"facility":"roadway","countermeasure_name":"x","colour":"red"}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("colour"));
    }
}
