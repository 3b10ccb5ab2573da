//! Resolved run configuration.
//!
//! Config files are plain text, one `key = value` per line; blank lines and
//! lines starting with `#` are ignored. A file whose first non-blank byte is
//! `{` is read as a flat JSON object with the same keys instead. Lists are
//! comma-separated; a grid of hidden widths is written `32x16,64x32`.
//!
//! `CMF_BIND` and `CMF_ARTIFACTS` override the bind address and the artifact
//! directory after the file is applied.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderBackbone, FineTuneConfig, ProjectedConfig, DEFAULT_TRANSFORMER_CHECKPOINT};
use crate::error::{Error, Result};
use crate::evaluation::{FineTuneScope, HyperParams, Selection};
use crate::regressor::TrainConfig;
use crate::schema::DEFAULT_PLACEHOLDERS;

pub const ENV_BIND: &str = "CMF_BIND";
pub const ENV_ARTIFACTS: &str = "CMF_ARTIFACTS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneChoice {
    Hashing,
    Projected,
    PretrainedTransformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub seed: u64,
    pub artifacts: PathBuf,
    pub bind: String,
    pub cmf_max: f64,
    pub placeholders: Vec<String>,

    pub backbone: BackboneChoice,
    pub hashing_dimension: usize,
    pub projected_input_dim: usize,
    pub projected_dimension: usize,
    pub transformer_checkpoint: String,

    pub pair_budget_factor: usize,
    pub finetune_epochs: usize,
    pub finetune_batch_size: usize,
    pub finetune_learning_rate: f64,
    pub finetune_validation_fraction: f64,
    pub finetune_scope: FineTuneScope,

    pub smoothing: f64,
    pub hidden_widths: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub validation_fraction: f64,

    pub folds: usize,
    pub inner_folds: usize,
    pub grid_widths: Vec<Vec<usize>>,
    pub grid_learning_rates: Vec<f64>,
    pub selection: Selection,
    pub knn_k: usize,
    pub batch_cap: usize,
}

impl Default for Config {
    fn default() -> Self {
        let ft = FineTuneConfig::default();
        let tc = TrainConfig::default();
        Config {
            seed: 42,
            artifacts: PathBuf::from("artifacts"),
            bind: "127.0.0.1:8080".into(),
            cmf_max: 2.0,
            placeholders: DEFAULT_PLACEHOLDERS.iter().map(|s| s.to_string()).collect(),
            backbone: BackboneChoice::Projected,
            hashing_dimension: 256,
            projected_input_dim: 4096,
            projected_dimension: 128,
            transformer_checkpoint: DEFAULT_TRANSFORMER_CHECKPOINT.into(),
            pair_budget_factor: 20,
            finetune_epochs: ft.epochs,
            finetune_batch_size: ft.batch_size,
            finetune_learning_rate: ft.learning_rate,
            finetune_validation_fraction: ft.validation_fraction,
            finetune_scope: FineTuneScope::PerOuterFold,
            smoothing: 100.0,
            hidden_widths: tc.hidden_widths,
            learning_rate: tc.learning_rate,
            epochs: tc.epochs,
            batch_size: tc.batch_size,
            patience: tc.patience,
            validation_fraction: tc.validation_fraction,
            folds: 5,
            inner_folds: 5,
            grid_widths: vec![vec![32, 16], vec![64, 32], vec![128, 64]],
            grid_learning_rates: vec![1e-3, 3e-4],
            selection: Selection::Mse,
            knn_k: 10,
            batch_cap: 256,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split('x').map(|s| parse(key, s)).collect()
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.trim().to_string()))
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "artifacts" => self.artifacts = PathBuf::from(value.trim()),
            "bind" => self.bind = value.trim().to_string(),
            "cmf_max" => self.cmf_max = parse(key, value)?,
            "placeholders" => self.placeholders = value.split(',').map(|s| s.trim().to_lowercase()).collect(),
            "backbone" => self.backbone = parse_enum(key, value)?,
            "hashing_dimension" => self.hashing_dimension = parse(key, value)?,
            "projected_input_dim" => self.projected_input_dim = parse(key, value)?,
            "projected_dimension" => self.projected_dimension = parse(key, value)?,
            "transformer_checkpoint" => self.transformer_checkpoint = value.trim().to_string(),
            "pair_budget_factor" => self.pair_budget_factor = parse(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "finetune_batch_size" => self.finetune_batch_size = parse(key, value)?,
            "finetune_learning_rate" => self.finetune_learning_rate = parse(key, value)?,
            "finetune_validation_fraction" => self.finetune_validation_fraction = parse(key, value)?,
            "finetune_scope" => self.finetune_scope = parse_enum(key, value)?,
            "smoothing" => self.smoothing = parse(key, value)?,
            "hidden_widths" => self.hidden_widths = parse_list(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "inner_folds" => self.inner_folds = parse(key, value)?,
            "grid_widths" => {
                self.grid_widths = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_widths(key, s))
                    .collect::<Result<_>>()?
            }
            "grid_learning_rates" => self.grid_learning_rates = parse_list(key, value)?,
            "selection" => self.selection = parse_enum(key, value)?,
            "knn_k" => self.knn_k = parse(key, value)?,
            "batch_cap" => self.batch_cap = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Parses config text (key-value or JSON) on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_text(&text)
    }

    /// Applies `CMF_BIND` / `CMF_ARTIFACTS` when set.
    pub fn apply_env(&mut self) {
        self.apply_overrides(std::env::var(ENV_BIND).ok(), std::env::var(ENV_ARTIFACTS).ok());
    }

    pub fn apply_overrides(&mut self, bind: Option<String>, artifacts: Option<String>) {
        if let Some(b) = bind.filter(|s| !s.trim().is_empty()) {
            self.bind = b;
        }
        if let Some(a) = artifacts.filter(|s| !s.trim().is_empty()) {
            self.artifacts = PathBuf::from(a);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cmf_max > 0.0) {
            return Err(Error::Config("cmf_max must be positive".into()));
        }
        if !(self.smoothing > 0.0) {
            return Err(Error::Config("smoothing must be positive".into()));
        }
        if self.folds < 2 || self.inner_folds < 2 {
            return Err(Error::Config("folds and inner_folds must be at least 2".into()));
        }
        if self.grid_widths.is_empty() || self.grid_learning_rates.is_empty() {
            return Err(Error::Config("the hyperparameter grid must not be empty".into()));
        }
        if self.batch_cap == 0 || self.knn_k == 0 || self.pair_budget_factor == 0 {
            return Err(Error::Config("batch_cap, knn_k and pair_budget_factor must be positive".into()));
        }
        if self.hashing_dimension == 0 || self.projected_dimension == 0 || self.projected_input_dim == 0 {
            return Err(Error::Config("embedding dimensions must be positive".into()));
        }
        self.train_config().validate()?;
        self.finetune_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden_widths: self.hidden_widths.clone(),
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
        }
    }

    pub fn finetune_config(&self) -> FineTuneConfig {
        FineTuneConfig {
            epochs: self.finetune_epochs,
            batch_size: self.finetune_batch_size,
            learning_rate: self.finetune_learning_rate,
            seed: self.seed,
            validation_fraction: self.finetune_validation_fraction,
        }
    }

    pub fn grid(&self) -> Vec<HyperParams> {
        let mut grid = Vec::new();
        for w in &self.grid_widths {
            for &lr in &self.grid_learning_rates {
                grid.push(HyperParams {
                    hidden_widths: w.clone(),
                    learning_rate: lr,
                });
            }
        }
        grid
    }

    /// The untuned backbone this configuration selects.
    pub fn build_backbone(&self) -> Result<EncoderBackbone> {
        match self.backbone {
            BackboneChoice::Hashing => Ok(EncoderBackbone::hashing(self.hashing_dimension)),
            BackboneChoice::Projected => EncoderBackbone::projected(ProjectedConfig {
                input_dim: self.projected_input_dim,
                dimension: self.projected_dimension,
                seed: self.seed,
                ..Default::default()
            }),
            BackboneChoice::PretrainedTransformer => Err(Error::BackboneNotLoaded(format!(
                "{} (pretrained transformer checkpoints are not supported in this build; \
                 use backbone = projected or hashing)",
                self.transformer_checkpoint
            ))),
        }
    }

    /// Stable digest of the resolved configuration.
    pub fn digest(&self) -> String {
        crate::artifact::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    if text.trim_start().starts_with('{') {
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config JSON: {e}")))?;
        return obj
            .into_iter()
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Bool(b) => b.to_string(),
                    serde_json::Value::Array(items) => items
                        .iter()
                        .map(|i| match i {
                            serde_json::Value::String(s) => s.clone(),
                            other => other.to_string(),
                        })
                        .collect::<Vec<_>>()
                        .join(","),
                    other => return Err(Error::Config(format!("unsupported value {other} for `{k}`"))),
                };
                Ok((k, s))
            })
            .collect();
    }
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
