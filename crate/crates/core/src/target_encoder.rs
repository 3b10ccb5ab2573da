//! Smoothed target (mean) encoding of categorical context fields.
//!
//! A category seen `n` times with CMF sum `S` encodes to
//! `λ·S/n + (1 − λ)·global_mean` with `λ = n / (n + l)`. Missing values are
//! an ordinary category under the reserved [`MISSING`] token; categories never
//! seen during fitting encode to the global mean.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::ingest::{Dataset, ScenarioRecord};

pub const MISSING: &str = "__MISSING__";
pub const DEFAULT_SMOOTHING: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub sum: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncoderState {
    /// Encoded feature order; defines the layout of [`transform`] output.
    pub features: Vec<String>,
    #[serde(flatten)]
    pub stats: BTreeMap<String, BTreeMap<String, CategoryStat>>,
    pub global_sum: f64,
    pub global_count: u64,
    pub l: f64,
}

impl TargetEncoderState {
    pub fn k(&self) -> usize {
        self.features.len()
    }

    pub fn global_mean(&self) -> f64 {
        self.global_sum / self.global_count as f64
    }

    /// Known categories per feature (excluding the missing token).
    pub fn vocabulary(&self) -> BTreeMap<String, Vec<String>> {
        self.features
            .iter()
            .map(|f| {
                let cats = self
                    .stats
                    .get(f)
                    .map(|m| m.keys().filter(|c| c.as_str() != MISSING).cloned().collect())
                    .unwrap_or_default();
                (f.clone(), cats)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let state: TargetEncoderState = artifact::read_json(path)?;
        if !(state.l > 0.0) || state.global_count == 0 {
            return Err(Error::CorruptArtifact {
                path: path.to_path_buf(),
                message: "target encoder state has no data or non-positive smoothing".into(),
            });
        }
        Ok(state)
    }
}

fn category_key(value: Option<&str>) -> &str {
    value.unwrap_or(MISSING)
}

pub fn fit(dataset: &Dataset, features: &[String], l: f64) -> Result<TargetEncoderState> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("cannot fit a target encoder on an empty dataset".into()));
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Config(format!("smoothing l must be positive, got {l}")));
    }
    for f in features {
        if !dataset.schema.categorical_fields.contains(f) {
            return Err(Error::UnknownFeature(f.clone()));
        }
    }
    let mut stats: BTreeMap<String, BTreeMap<String, CategoryStat>> = BTreeMap::new();
    let mut global_sum = 0.0;
    for r in &dataset.records {
        global_sum += r.cmf;
        for f in features {
            let entry = stats
                .entry(f.clone())
                .or_default()
                .entry(category_key(r.get(f)).to_string())
                .or_insert(CategoryStat { sum: 0.0, count: 0 });
            entry.sum += r.cmf;
            entry.count += 1;
        }
    }
    Ok(TargetEncoderState {
        features: features.to_vec(),
        stats,
        global_sum,
        global_count: dataset.len() as u64,
        l,
    })
}

/// Encoding of one category; `None` is the missing category.
pub fn encode_value(state: &TargetEncoderState, feature: &str, category: Option<&str>) -> f64 {
    let global = state.global_mean();
    let Some(stat) = state
        .stats
        .get(feature)
        .and_then(|m| m.get(category_key(category)))
    else {
        return global;
    };
    let n = stat.count as f64;
    let lambda = n / (n + state.l);
    lambda * (stat.sum / n) + (1.0 - lambda) * global
}

pub fn transform(state: &TargetEncoderState, record: &ScenarioRecord) -> Vec<f64> {
    state
        .features
        .iter()
        .map(|f| encode_value(state, f, record.get(f)))
        .collect()
}
