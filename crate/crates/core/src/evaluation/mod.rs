//! Nested cross-validation, metrics, baselines and reporting.
//!
//! Each outer fold runs an inner grid search on its training records only,
//! refits the winning configuration on the whole outer-training set and
//! scores the held-out fold. Averages are unweighted means over folds.

mod folds;
mod knn;
mod metrics;
mod pipeline;
mod report;

use serde::{Deserialize, Serialize};

pub use folds::FoldSplit;
pub use knn::{distance, knn_baseline, neighbours, DEFAULT_K, YEAR_BIN};
pub use metrics::{consistency_rate, mae, mse, pop, rmse, Metrics, POP_THRESHOLD};
pub use pipeline::{
    default_grid, CmfPipeline, ConstantPipeline, FineTuneScope, FineTuneSettings, FittedModel, HyperParams,
    KnnPipeline, PreparedFold, SemanticPipeline,
};
pub use report::{
    case_study_structured, is_shoulder_width, subgroup_report, write_report_bundle, CaseStudy, CaseStudyRow,
    SubgroupReport, SubgroupRow, MISSING_GROUP,
};

use crate::encoder::EncoderBackbone;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::regressor::TrainConfig;
use crate::schema::Facility;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Mean inner-fold squared error (the training loss).
    Mse,
    Mae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub inner_k: usize,
    pub seed: u64,
    pub selection: Selection,
    /// Digest of the resolved configuration, copied into the report.
    pub config_digest: String,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            k: 5,
            inner_k: 5,
            seed: 42,
            selection: Selection::Mse,
            config_digest: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub params: HyperParams,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Option<Metrics>,
    pub selected: Option<HyperParams>,
    pub grid_scores: Vec<GridScore>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub cmf: f64,
    pub cmf_hat: f64,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub facility: Facility,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    /// Mean of the per-fold metrics over the folds that completed.
    pub average: Option<Metrics>,
    pub predictions: Vec<PredictionRow>,
    pub model_identifiers: Vec<String>,
    pub config_digest: String,
    pub notes: Vec<String>,
    pub complete: bool,
}

impl MetricsReport {
    pub fn fold_metrics(&self) -> Vec<Metrics> {
        self.folds.iter().filter_map(|f| f.metrics).collect()
    }
}

/// Hook for audits; called after each outer-fold refit, before scoring.
pub trait FoldObserver {
    fn outer_fitted(&mut self, fold: usize, train: &Dataset, test: &Dataset, model: &dyn FittedModel);
}

impl FoldObserver for () {
    fn outer_fitted(&mut self, _: usize, _: &Dataset, _: &Dataset, _: &dyn FittedModel) {}
}

pub fn nested_cv(
    dataset: &Dataset,
    pipeline: &dyn CmfPipeline,
    grid: &[HyperParams],
    options: &CvOptions,
) -> Result<MetricsReport> {
    nested_cv_observed(dataset, pipeline, grid, options, &mut ())
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fold as u64 + 1)
}

fn select(records: &Dataset, idx: &[usize]) -> Dataset {
    records.subset(idx.iter().map(|&i| records.records[i].clone()).collect())
}

fn targets(ds: &Dataset) -> Vec<f64> {
    ds.records.iter().map(|r| r.cmf).collect()
}

pub fn nested_cv_observed(
    dataset: &Dataset,
    pipeline: &dyn CmfPipeline,
    grid: &[HyperParams],
    options: &CvOptions,
    observer: &mut dyn FoldObserver,
) -> Result<MetricsReport> {
    if grid.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    let split = FoldSplit::new(dataset.len(), options.k, options.inner_k, options.seed)?;
    let mut folds = Vec::with_capacity(options.k);
    let mut predictions = Vec::new();
    let mut identifiers = Vec::new();

    for fold in 0..options.k {
        let seed = fold_seed(options.seed, fold);
        let train_idx = split.outer_train(fold);
        let test_idx = split.outer_test(fold);
        let train = select(dataset, &train_idx);
        let test = select(dataset, &test_idx);
        let mut result = FoldResult {
            fold,
            n_train: train.len(),
            n_test: test.len(),
            metrics: None,
            selected: None,
            grid_scores: Vec::new(),
            error: None,
        };
        let outcome = (|| -> Result<(Vec<f64>, String)> {
            let prepared = pipeline.prepare(&train, fold, seed)?;
            let best = if grid.len() == 1 || split.inner_k(fold) < 2 {
                grid[0].clone()
            } else {
                for params in grid {
                    let mut scores = Vec::new();
                    for inner in 0..split.inner_k(fold) {
                        let (itr, ival) = split.inner_split(fold, inner);
                        let model = prepared.fit(&select(dataset, &itr), params, seed)?;
                        let val = select(dataset, &ival);
                        let yhat = model.predict(&val.records)?;
                        scores.push(match options.selection {
                            Selection::Mse => mse(&targets(&val), &yhat)?,
                            Selection::Mae => mae(&targets(&val), &yhat)?,
                        });
                    }
                    result.grid_scores.push(GridScore {
                        params: params.clone(),
                        score: scores.iter().sum::<f64>() / scores.len() as f64,
                    });
                }
                let best = result
                    .grid_scores
                    .iter()
                    .min_by(|a, b| a.score.total_cmp(&b.score))
                    .expect("grid is non-empty");
                best.params.clone()
            };
            let model = prepared.fit(&train, &best, seed)?;
            observer.outer_fitted(fold, &train, &test, model.as_ref());
            result.selected = Some(best);
            Ok((model.predict(&test.records)?, prepared.identifier()))
        })();
        match outcome.and_then(|(yhat, id)| Ok((Metrics::compute(&targets(&test), &yhat)?, yhat, id))) {
            Ok((metrics, yhat, id)) => {
                result.metrics = Some(metrics);
                predictions.extend(test.records.iter().zip(yhat).map(|(r, p)| PredictionRow {
                    id: r.id.clone(),
                    cmf: r.cmf,
                    cmf_hat: p,
                    fold,
                }));
                if !identifiers.contains(&id) {
                    identifiers.push(id);
                }
            }
            Err(e) => {
                tracing::warn!(fold, error = %e, "outer fold failed");
                result.error = Some(e.to_string());
            }
        }
        tracing::info!(fold, metrics = ?result.metrics, selected = ?result.selected, "outer fold done");
        folds.push(result);
    }

    let per_fold: Vec<Metrics> = folds.iter().filter_map(|f| f.metrics).collect();
    let complete = per_fold.len() == folds.len();
    let mut notes = pipeline.notes();
    if !complete {
        notes.push(format!(
            "partial coverage: {} of {} outer folds completed",
            per_fold.len(),
            folds.len()
        ));
    }
    Ok(MetricsReport {
        model: pipeline.label(),
        facility: dataset.facility,
        k: options.k,
        seed: options.seed,
        average: Metrics::average(&per_fold),
        folds,
        predictions,
        model_identifiers: identifiers,
        config_digest: options.config_digest.clone(),
        notes,
        complete,
    })
}

/// The same harness with a frozen backbone and no fine-tuning.
pub fn pretrained_baseline(
    dataset: &Dataset,
    backbone: EncoderBackbone,
    train: TrainConfig,
    smoothing: f64,
    grid: &[HyperParams],
    options: &CvOptions,
) -> Result<MetricsReport> {
    let pipeline = SemanticPipeline::new(backbone, None, train, smoothing)?;
    nested_cv(dataset, &pipeline, grid, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ScenarioRecord;
    use crate::schema::FieldSchema;

    fn constant_dataset(n: usize) -> Dataset {
        let records = (0..n)
            .map(|i| ScenarioRecord::new(format!("r{i}"), Facility::Roadway, "x", 1.0))
            .collect();
        Dataset::new(FieldSchema::for_facility(Facility::Roadway), records).unwrap()
    }

    fn one_point() -> Vec<HyperParams> {
        vec![HyperParams {
            hidden_widths: vec![4, 2],
            learning_rate: 1e-3,
        }]
    }

    #[test]
    fn constant_pipeline_is_perfect_on_constant_data() {
        let report = nested_cv(&constant_dataset(23), &ConstantPipeline(1.0), &one_point(), &CvOptions::default())
            .unwrap();
        let avg = report.average.unwrap();
        assert_eq!((avg.mae, avg.rmse, avg.cr, avg.pop), (0.0, 0.0, 1.0, 100.0));
        assert!(report.complete);
        assert_eq!(report.predictions.len(), 23);
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(nested_cv(&constant_dataset(10), &ConstantPipeline(1.0), &[], &CvOptions::default()).is_err());
    }

    #[test]
    fn failing_pipeline_is_reported_not_raised() {
        struct Broken;
        impl CmfPipeline for Broken {
            fn label(&self) -> String {
                "broken".into()
            }
            fn prepare<'a>(&'a self, _: &Dataset, fold: usize, _: u64) -> Result<Box<dyn PreparedFold + 'a>> {
                if fold == 2 {
                    Err(Error::Pipeline("boom".into()))
                } else {
                    Ok(Box::new(ConstantPipeline(0.9)))
                }
            }
        }
        let report = nested_cv(&constant_dataset(20), &Broken, &one_point(), &CvOptions::default()).unwrap();
        assert!(!report.complete);
        assert_eq!(report.fold_metrics().len(), 4);
        assert!(report.folds[2].error.as_deref().unwrap().contains("boom"));
        assert!(report.notes.iter().any(|n| n.contains("partial coverage")));
        assert_eq!(report.predictions.len(), 16);
    }

    #[test]
    fn average_is_mean_of_folds() {
        let mut ds = constant_dataset(31);
        for (i, r) in ds.records.iter_mut().enumerate() {
            r.cmf = 0.5 + (i % 7) as f64 * 0.2;
        }
        let report = nested_cv(&ds, &KnnPipeline { k: 3 }, &one_point(), &CvOptions::default()).unwrap();
        let per = report.fold_metrics();
        let mean_mae = per.iter().map(|m| m.mae).sum::<f64>() / per.len() as f64;
        assert!((report.average.unwrap().mae - mean_mae).abs() < 1e-15);
    }
}
