use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use serde::Serialize;
use serde_json::Value;

use cmf_client::CmfClient;
use cmf_core::api::{PredictionRequest, PredictionResponse};
use cmf_core::artifact::{self, ArtifactLayout};
use cmf_core::config::Config;
use cmf_core::encoder;
use cmf_core::evaluation::{
    self, case_study_structured, is_shoulder_width, nested_cv, subgroup_report, write_report_bundle, CmfPipeline,
    CvOptions, FineTuneSettings, KnnPipeline, MetricsReport, PredictionRow, SemanticPipeline,
};
use cmf_core::ingest::{self, ColumnMapping};
use cmf_core::jsonl::{read_jsonl, write_jsonl};
use cmf_core::predictor::CmfPredictor;
use cmf_core::scenario_text::build_pseudo_sentence;
use cmf_core::schema::{self, FieldSchema};
use cmf_core::spsf::{generate_training_pairs, ScenarioPair, SCORE_BUCKETS};
use cmf_core::synthetic::{self, SyntheticConfig};
use cmf_core::{Dataset, Facility};
use cmf_service::AppState;

use crate::{Common, ModelKind};

/// Subgroup tables written by `evaluate` when present in the schema.
const DEFAULT_GROUPS: [&str; 3] = [schema::COUNTERMEASURE_CATEGORY, schema::CRASH_TYPE, schema::AREA_TYPE];

pub struct Context {
    config: Config,
    layout: ArtifactLayout,
    facility: Option<Facility>,
}

#[derive(Serialize)]
struct IngestSummary {
    source: String,
    rows: usize,
    rejected: BTreeMap<String, usize>,
    outliers_removed: usize,
    facilities: BTreeMap<Facility, FacilitySummary>,
}

#[derive(Serialize)]
struct FacilitySummary {
    records: usize,
    missing_rates: Vec<(String, f64)>,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

impl Context {
    /// Config file, then environment, then command-line flags.
    pub fn resolve(common: &Common) -> Result<Self> {
        let mut config = match &common.config {
            Some(p) => Config::from_file(p).with_context(|| format!("reading config {}", p.display()))?,
            None => Config::default(),
        };
        config.apply_env();
        if let Some(a) = &common.artifacts {
            config.artifacts = a.clone();
        }
        if let Some(s) = common.seed {
            config.seed = s;
        }
        config.validate()?;
        Ok(Context {
            layout: ArtifactLayout::new(&config.artifacts),
            config,
            facility: common.facility,
        })
    }

    fn selected(&self) -> Vec<Facility> {
        match self.facility {
            Some(f) => vec![f],
            None => Facility::ALL.to_vec(),
        }
    }

    /// Facilities with ingested data; errors naming `ingest` when there are none.
    fn ingested(&self) -> Result<Vec<Facility>> {
        let have: Vec<Facility> = self
            .selected()
            .into_iter()
            .filter(|&f| self.layout.dataset(f).exists())
            .collect();
        if have.is_empty() {
            let first = self.selected()[0];
            self.layout.require(self.layout.dataset(first), "ingest")?;
        }
        Ok(have)
    }

    fn dataset(&self, facility: Facility) -> Result<Dataset> {
        let path = self.layout.require(self.layout.dataset(facility), "ingest")?;
        let schema_path = self.layout.require(self.layout.dataset_schema(facility), "ingest")?;
        let schema: FieldSchema = artifact::read_json(&schema_path)?;
        Ok(Dataset::read_jsonl(&path, schema)?)
    }

    pub fn ingest(&self, input: Option<PathBuf>, mapping: Option<PathBuf>, synthetic: Option<usize>) -> Result<()> {
        let (source, rows, rejected, outliers_removed, datasets) = if let Some(n) = synthetic {
            let mut datasets = BTreeMap::new();
            for (i, f) in self.selected().into_iter().enumerate() {
                let cfg = SyntheticConfig {
                    facility: f,
                    records: n,
                    seed: self.config.seed.wrapping_add(i as u64),
                    ..Default::default()
                };
                datasets.insert(f, synthetic::generate(&cfg)?);
            }
            (format!("synthetic ({n} per facility)"), n * datasets.len(), BTreeMap::new(), 0, datasets)
        } else {
            let input = input.expect("clap requires --input without --synthetic");
            let mut mapping = match mapping {
                Some(p) => ColumnMapping::from_json_file(&p)?,
                None => ColumnMapping::default(),
            };
            if mapping.placeholders.is_none() {
                mapping.placeholders = Some(self.config.placeholders.clone());
            }
            let raws = ingest::load_clearinghouse_csv(&input, &mapping)?;
            let normalized = ingest::normalize_all(&raws, &mapping);
            let mut rejected = BTreeMap::new();
            for r in &normalized.rejections {
                *rejected.entry(r.reason.to_string()).or_insert(0) += 1;
            }
            let filtered = ingest::filter_outliers(normalized.records, self.config.cmf_max);
            let mut datasets = ingest::split_by_facility(filtered.kept, &mapping);
            datasets.retain(|f, _| self.selected().contains(f));
            (input.display().to_string(), raws.len(), rejected, filtered.removed, datasets)
        };

        let mut facilities = BTreeMap::new();
        for (f, ds) in &datasets {
            if ds.is_empty() {
                tracing::warn!(facility = %f, "no records for facility");
                continue;
            }
            ds.write_jsonl(&self.layout.dataset(*f))?;
            artifact::write_json(&self.layout.dataset_schema(*f), &ds.schema)?;
            facilities.insert(
                *f,
                FacilitySummary {
                    records: ds.len(),
                    missing_rates: ingest::missing_rates(ds),
                },
            );
        }
        if facilities.is_empty() {
            bail!("no usable records in {source}");
        }
        let summary = IngestSummary {
            source,
            rows,
            rejected,
            outliers_removed,
            facilities,
        };
        artifact::write_json(&self.layout.ingest_summary(), &summary)?;
        print_json(&summary)
    }

    pub fn pairs(&self) -> Result<()> {
        let mut out = BTreeMap::new();
        for f in self.ingested()? {
            let ds = self.dataset(f)?;
            let budget = self.config.pair_budget_factor * ds.len();
            let pairs = generate_training_pairs(&ds.records, budget, self.config.seed)?;
            write_jsonl(&self.layout.pairs(f), &pairs)?;
            let mut buckets = [0usize; SCORE_BUCKETS];
            for p in &pairs {
                buckets[p.gold_score.bucket()] += 1;
            }
            out.insert(f, serde_json::json!({"pairs": pairs.len(), "buckets": buckets}));
        }
        print_json(&out)
    }

    pub fn finetune(&self) -> Result<()> {
        let backbone = self.config.build_backbone()?;
        if !backbone.trainable() {
            bail!("the {:?} backbone has no trainable weights; set `backbone = projected` to fine-tune", self.config.backbone);
        }
        let mut out = BTreeMap::new();
        for f in self.ingested()? {
            let ds = self.dataset(f)?;
            let pairs: Vec<ScenarioPair> = read_jsonl(&self.layout.require(self.layout.pairs(f), "pairs")?)?;
            let sentences: HashMap<String, _> = ds
                .records
                .iter()
                .map(|r| (r.id.clone(), build_pseudo_sentence(r, &ds.schema)))
                .collect();
            let (tuned, outcome) = encoder::fine_tune(&backbone, &pairs, &sentences, &self.config.finetune_config())?;
            let dir = self.layout.backbone(f);
            let manifest = encoder::save_backbone(&tuned, &dir)?;
            let summary = serde_json::json!({
                "backbone": manifest.identifier,
                "pairs": pairs.len(),
                "train_loss": outcome.train_loss,
                "validation_loss": outcome.validation_loss,
                "history": outcome.history,
            });
            artifact::write_json(&dir.join("finetune.json"), &summary)?;
            out.insert(f, summary);
        }
        print_json(&out)
    }

    pub fn train(&self, frozen: bool) -> Result<()> {
        let mut out = BTreeMap::new();
        for f in self.ingested()? {
            let ds = self.dataset(f)?;
            let base = self.config.build_backbone()?;
            let backbone = if frozen || !base.trainable() {
                base
            } else {
                let dir = self.layout.require(self.layout.backbone(f), "finetune")?;
                encoder::load_backbone(&dir, Some(base.dimension()))?
            };
            let (model, report) =
                CmfPredictor::fit(&ds, Arc::new(backbone), self.config.smoothing, &self.config.train_config())?;
            model.save(&self.layout.model(f))?;
            out.insert(
                f,
                serde_json::json!({
                    "model_version": model.model_version(),
                    "records": ds.len(),
                    "final_loss": report.final_loss,
                    "best_epoch": report.best_epoch,
                    "epochs_run": report.epoch_losses.len(),
                }),
            );
        }
        print_json(&out)
    }

    fn default_kind(&self) -> Result<ModelKind> {
        Ok(if self.config.build_backbone()?.trainable() {
            ModelKind::FineTuned
        } else {
            ModelKind::NonTuning
        })
    }

    fn pipeline(&self, kind: ModelKind) -> Result<Box<dyn CmfPipeline>> {
        Ok(match kind {
            ModelKind::Knn => Box::new(KnnPipeline { k: self.config.knn_k }),
            ModelKind::NonTuning => Box::new(SemanticPipeline::new(
                self.config.build_backbone()?,
                None,
                self.config.train_config(),
                self.config.smoothing,
            )?),
            ModelKind::FineTuned => {
                let backbone = self.config.build_backbone()?;
                if !backbone.trainable() {
                    bail!(
                        "the {:?} backbone cannot be fine-tuned; use `--model non-tuning` or `backbone = projected`",
                        self.config.backbone
                    );
                }
                Box::new(SemanticPipeline::new(
                    backbone,
                    Some(FineTuneSettings {
                        config: self.config.finetune_config(),
                        pairs_per_record: Some(self.config.pair_budget_factor),
                        scope: self.config.finetune_scope,
                    }),
                    self.config.train_config(),
                    self.config.smoothing,
                )?)
            }
        })
    }

    pub fn evaluate(&self, kind: Option<ModelKind>) -> Result<()> {
        let kind = match kind {
            Some(k) => k,
            None => self.default_kind()?,
        };
        let pipeline = self.pipeline(kind)?;
        let mut grid = self.config.grid();
        if kind == ModelKind::Knn {
            grid.truncate(1);
        }
        let options = CvOptions {
            k: self.config.folds,
            inner_k: self.config.inner_folds,
            seed: self.config.seed,
            selection: self.config.selection,
            config_digest: self.config.digest(),
        };
        let mut out = BTreeMap::new();
        for f in self.ingested()? {
            let ds = self.dataset(f)?;
            let report = nested_cv(&ds, pipeline.as_ref(), &grid, &options)?;
            let groups = DEFAULT_GROUPS
                .iter()
                .filter(|k| ds.schema.is_context_field(k))
                .map(|k| subgroup_report(&report, &ds, &[k]))
                .collect::<Result<Vec<_>, _>>()?;
            let dir = self.layout.report(f, &pipeline.label());
            write_report_bundle(&dir, &report, &groups, &serde_json::to_value(&self.config)?)?;
            if report.average.is_none() {
                bail!("every outer fold failed for {f}; see {}", dir.join("metrics.json").display());
            }
            out.insert(
                f,
                serde_json::json!({
                    "model": report.model,
                    "average": report.average,
                    "complete": report.complete,
                    "report": dir,
                }),
            );
        }
        print_json(&out)
    }

    fn load_report(&self, dir: &Path) -> Result<MetricsReport> {
        let metrics = self.layout.require(dir.join("metrics.json"), "evaluate")?;
        let mut value: Value = artifact::read_json(&metrics)?;
        let predictions: Vec<PredictionRow> = read_jsonl(&dir.join("predictions.jsonl"))?;
        value["predictions"] = serde_json::to_value(predictions)?;
        serde_json::from_value(value).with_context(|| format!("reading {}", metrics.display()))
    }

    pub fn report(&self, kind: Option<ModelKind>, by: &[String], case_study: bool) -> Result<()> {
        let kind = match kind {
            Some(k) => k,
            None => self.default_kind()?,
        };
        let label = self.pipeline(kind)?.label();
        let keys: Vec<&str> = if by.is_empty() {
            vec![schema::COUNTERMEASURE_CATEGORY]
        } else {
            by.iter().map(String::as_str).collect()
        };
        for f in self.ingested()? {
            let ds = self.dataset(f)?;
            let dir = self.layout.report(f, &label);
            let report = self.load_report(&dir)?;
            let table = subgroup_report(&report, &ds, &keys)?;
            let csv = table.to_csv()?;
            artifact::atomic_write(&dir.join(format!("subgroups_{}.csv", keys.join("+"))), csv.as_bytes())?;
            println!("# {f} ({label}) by {}", keys.join(", "));
            print!("{csv}");
            if case_study {
                let study = case_study_structured(&report, &ds, is_shoulder_width)?;
                artifact::atomic_write(&dir.join("case_study.csv"), study.to_csv()?.as_bytes())?;
                match &study.warning {
                    Some(w) => println!("# case study: {w}"),
                    None => {
                        let y: Vec<f64> = study.rows.iter().map(|r| r.cmf).collect();
                        let yhat: Vec<f64> = study.rows.iter().map(|r| r.cmf_hat).collect();
                        println!(
                            "# case study: {} shoulder-width records, MAE {:.4}",
                            y.len(),
                            evaluation::mae(&y, &yhat)?
                        );
                    }
                }
            }
        }
        Ok(())
    }

    pub fn predict(&self, json: &Path, server: Option<String>) -> Result<()> {
        let text = if json == Path::new("-") {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        } else {
            std::fs::read_to_string(json).with_context(|| format!("reading {}", json.display()))?
        };
        let value: Value = serde_json::from_str(&text).context("request is not valid JSON")?;
        let single = !value.is_array();
        let requests: Vec<PredictionRequest> = if single {
            vec![serde_json::from_value(value).context("invalid prediction request")?]
        } else {
            serde_json::from_value(value).context("invalid prediction request")?
        };
        if let Some(f) = self.facility {
            if let Some(r) = requests.iter().find(|r| r.facility != f) {
                bail!("request facility {} does not match --facility {f}", r.facility);
            }
        }

        let responses: Vec<PredictionResponse> = match server {
            Some(url) => {
                let client = CmfClient::new(url);
                runtime()?.block_on(async {
                    if single {
                        client.predict(&requests[0]).await.map(|r| vec![r])
                    } else {
                        client.predict_batch(&requests).await
                    }
                })?
            }
            None => {
                let mut models: BTreeMap<Facility, CmfPredictor> = BTreeMap::new();
                let mut out = Vec::with_capacity(requests.len());
                for r in &requests {
                    if !models.contains_key(&r.facility) {
                        let dir = self.layout.require(self.layout.model(r.facility), "train")?;
                        models.insert(r.facility, CmfPredictor::load(&dir)?);
                    }
                    out.push(models[&r.facility].predict(r)?);
                }
                out
            }
        };
        if single {
            print_json(&responses[0])
        } else {
            print_json(&responses)
        }
    }

    pub fn serve(&self, bind: Option<String>) -> Result<()> {
        let bind = bind.unwrap_or_else(|| self.config.bind.clone());
        let explicit: Vec<Facility> = self.facility.into_iter().collect();
        let state = AppState::load(&self.layout, &explicit, self.config.batch_cap)?;
        runtime()?.block_on(async {
            let listener = tokio::net::TcpListener::bind(&bind)
                .await
                .with_context(|| format!("binding {bind}"))?;
            eprintln!("listening on http://{}", listener.local_addr()?);
            cmf_service::serve(listener, state, async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
            Ok(())
        })
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}
