//! Model pipelines that the nested cross-validation harness can refit per fold.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::knn::knn_baseline;
use crate::encoder::{fine_tune, EncoderBackbone, FineTuneConfig};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, ScenarioRecord};
use crate::predictor::CmfPredictor;
use crate::regressor::TrainConfig;
use crate::scenario_text::build_pseudo_sentence;
use crate::spsf::{default_budget, generate_training_pairs};
use crate::target_encoder::TargetEncoderState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub hidden_widths: Vec<usize>,
    pub learning_rate: f64,
}

impl HyperParams {
    pub fn apply(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_widths: self.hidden_widths.clone(),
            learning_rate: self.learning_rate,
            seed,
            ..base.clone()
        }
    }
}

/// Widths {32,16}, {64,32}, {128,64} crossed with learning rates {1e-3, 3e-4}.
pub fn default_grid() -> Vec<HyperParams> {
    let mut grid = Vec::new();
    for widths in [[32, 16], [64, 32], [128, 64]] {
        for lr in [1e-3, 3e-4] {
            grid.push(HyperParams {
                hidden_widths: widths.to_vec(),
                learning_rate: lr,
            });
        }
    }
    grid
}

pub trait FittedModel {
    fn predict(&self, records: &[ScenarioRecord]) -> Result<Vec<f64>>;

    /// Fitted target-encoder state, for leakage audits.
    fn target_encoder(&self) -> Option<&TargetEncoderState> {
        None
    }
}

/// State fitted once per outer fold and shared by every grid point.
pub trait PreparedFold {
    fn fit(&self, train: &Dataset, params: &HyperParams, seed: u64) -> Result<Box<dyn FittedModel>>;

    fn identifier(&self) -> String;
}

pub trait CmfPipeline {
    fn label(&self) -> String;

    fn notes(&self) -> Vec<String> {
        Vec::new()
    }

    fn prepare<'a>(&'a self, outer_train: &Dataset, outer_fold: usize, seed: u64) -> Result<Box<dyn PreparedFold + 'a>>;
}

impl FittedModel for CmfPredictor {
    fn predict(&self, records: &[ScenarioRecord]) -> Result<Vec<f64>> {
        self.predict_records(records)
    }

    fn target_encoder(&self) -> Option<&TargetEncoderState> {
        Some(&self.encoder)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineTuneScope {
    /// Fine-tune on each outer fold's training data.
    PerOuterFold,
    /// Fine-tune once on the first outer fold's training data and reuse the
    /// result everywhere. Faster, but later folds' test records were seen.
    Once,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneSettings {
    pub config: FineTuneConfig,
    /// Pairs sampled per outer-training record; `None` uses the default.
    pub pairs_per_record: Option<usize>,
    pub scope: FineTuneScope,
}

/// Pseudo sentence → embedding → target encoding → MLP.
pub struct SemanticPipeline {
    backbone: Arc<EncoderBackbone>,
    fine_tune: Option<FineTuneSettings>,
    train: TrainConfig,
    smoothing: f64,
    reused: Mutex<Option<Arc<EncoderBackbone>>>,
}

impl SemanticPipeline {
    pub fn new(
        backbone: EncoderBackbone,
        fine_tune: Option<FineTuneSettings>,
        train: TrainConfig,
        smoothing: f64,
    ) -> Result<Self> {
        if fine_tune.is_some() && !backbone.trainable() {
            return Err(Error::NotTrainable);
        }
        if let Some(ft) = &fine_tune {
            ft.config.validate()?;
        }
        train.validate()?;
        Ok(SemanticPipeline {
            backbone: Arc::new(backbone),
            fine_tune,
            train,
            smoothing,
            reused: Mutex::new(None),
        })
    }

    fn tuned_backbone(&self, ft: &FineTuneSettings, outer_train: &Dataset, seed: u64) -> Result<Arc<EncoderBackbone>> {
        let budget = match ft.pairs_per_record {
            Some(k) => k * outer_train.len(),
            None => default_budget(outer_train.len()),
        };
        let pairs = generate_training_pairs(&outer_train.records, budget, seed)?;
        let sentences: HashMap<String, _> = outer_train
            .records
            .iter()
            .map(|r| (r.id.clone(), build_pseudo_sentence(r, &outer_train.schema)))
            .collect();
        let config = FineTuneConfig {
            seed,
            ..ft.config.clone()
        };
        let (tuned, outcome) = fine_tune(&self.backbone, &pairs, &sentences, &config)?;
        tracing::info!(
            pairs = pairs.len(),
            train_loss = outcome.train_loss,
            validation_loss = ?outcome.validation_loss,
            "fine-tuned backbone"
        );
        Ok(Arc::new(tuned))
    }
}

struct SemanticFold<'a> {
    pipeline: &'a SemanticPipeline,
    backbone: Arc<EncoderBackbone>,
}

impl PreparedFold for SemanticFold<'_> {
    fn fit(&self, train: &Dataset, params: &HyperParams, seed: u64) -> Result<Box<dyn FittedModel>> {
        let config = params.apply(&self.pipeline.train, seed);
        let (predictor, _) = CmfPredictor::fit(train, self.backbone.clone(), self.pipeline.smoothing, &config)?;
        Ok(Box::new(predictor))
    }

    fn identifier(&self) -> String {
        self.backbone.identifier()
    }
}

impl CmfPipeline for SemanticPipeline {
    fn label(&self) -> String {
        if self.fine_tune.is_some() {
            "fine-tuned".into()
        } else {
            "non-tuning".into()
        }
    }

    fn notes(&self) -> Vec<String> {
        let mut notes =
            vec!["output layer is 2·σ(z): the logistic output is scaled by 2 so predictions cover (0, 2)".to_string()];
        match self.fine_tune.as_ref().map(|f| f.scope) {
            Some(FineTuneScope::Once) => notes.push(
                "backbone fine-tuned once on the first outer fold's training data and reused for all folds; \
                 not faithful to the per-fold protocol (later folds' test records were seen during fine-tuning)"
                    .into(),
            ),
            Some(FineTuneScope::PerOuterFold) => notes.push(
                "backbone fine-tuned on each outer fold's training data and shared by that fold's inner grid search"
                    .into(),
            ),
            None => notes.push("backbone used without fine-tuning".into()),
        }
        notes
    }

    fn prepare<'a>(&'a self, outer_train: &Dataset, _outer_fold: usize, seed: u64) -> Result<Box<dyn PreparedFold + 'a>> {
        let backbone = match &self.fine_tune {
            None => self.backbone.clone(),
            Some(ft) if ft.scope == FineTuneScope::Once => {
                let mut reused = self.reused.lock().expect("fine-tune cache lock");
                match reused.as_ref() {
                    Some(b) => b.clone(),
                    None => {
                        let b = self.tuned_backbone(ft, outer_train, seed)?;
                        *reused = Some(b.clone());
                        b
                    }
                }
            }
            Some(ft) => self.tuned_backbone(ft, outer_train, seed)?,
        };
        Ok(Box::new(SemanticFold {
            pipeline: self,
            backbone,
        }))
    }
}

/// The non-encoding k-nearest-neighbour baseline.
pub struct KnnPipeline {
    pub k: usize,
}

struct KnnModel {
    train: Dataset,
    k: usize,
}

impl FittedModel for KnnModel {
    fn predict(&self, records: &[ScenarioRecord]) -> Result<Vec<f64>> {
        Ok(knn_baseline(&self.train, &self.train.subset(records.to_vec()), self.k))
    }
}

impl PreparedFold for KnnPipeline {
    fn fit(&self, train: &Dataset, _: &HyperParams, _: u64) -> Result<Box<dyn FittedModel>> {
        if train.is_empty() {
            return Err(Error::EmptyInput("k-NN needs training records".into()));
        }
        Ok(Box::new(KnnModel {
            train: train.clone(),
            k: self.k,
        }))
    }

    fn identifier(&self) -> String {
        format!("knn-k{}", self.k)
    }
}

impl CmfPipeline for KnnPipeline {
    fn label(&self) -> String {
        "non-encoding".into()
    }

    fn notes(&self) -> Vec<String> {
        vec![format!(
            "{}-NN over mismatch counts of the countermeasure name, context fields and 5-year bins of start/end year",
            self.k
        )]
    }

    fn prepare<'a>(&'a self, _: &Dataset, _: usize, _: u64) -> Result<Box<dyn PreparedFold + 'a>> {
        Ok(Box::new(KnnPipeline { k: self.k }))
    }
}

/// Always predicts the same value; useful as a harness fixture.
pub struct ConstantPipeline(pub f64);

impl FittedModel for ConstantPipeline {
    fn predict(&self, records: &[ScenarioRecord]) -> Result<Vec<f64>> {
        Ok(vec![self.0; records.len()])
    }
}

impl PreparedFold for ConstantPipeline {
    fn fit(&self, _: &Dataset, _: &HyperParams, _: u64) -> Result<Box<dyn FittedModel>> {
        Ok(Box::new(ConstantPipeline(self.0)))
    }

    fn identifier(&self) -> String {
        format!("constant-{}", self.0)
    }
}

impl CmfPipeline for ConstantPipeline {
    fn label(&self) -> String {
        "constant".into()
    }

    fn prepare<'a>(&'a self, _: &Dataset, _: usize, _: u64) -> Result<Box<dyn PreparedFold + 'a>> {
        Ok(Box::new(ConstantPipeline(self.0)))
    }
}
