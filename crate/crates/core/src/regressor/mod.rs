//! Fused feature vectors and the MLP that maps them to CMF predictions.
//!
//! A feature vector is three blocks in fixed order: the l2-normalized
//! semantic embedding (`m`), the target-encoded context (`k`) and the two
//! study years. Missing years are imputed with their training means.

mod mlp;
mod store;

use serde::{Deserialize, Serialize};

pub use mlp::{gradient_check, gradient_check_with_step, train, MlpModel, TrainConfig, TrainReport};
pub use store::{load_model, save_model, ModelManifest, MODEL_FORMAT};

use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::ingest::ScenarioRecord;

pub const YEAR_BLOCK: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub semantic_dim: usize,
    pub encoded_dim: usize,
    /// Training means of start and end year.
    pub year_means: [f64; 2],
}

impl FeatureLayout {
    /// Year means come from the records that have the year; with none, 0.
    pub fn fit(records: &[ScenarioRecord], semantic_dim: usize, encoded_dim: usize) -> Self {
        let mean = |get: fn(&ScenarioRecord) -> Option<i32>| {
            let ys: Vec<f64> = records.iter().filter_map(get).map(f64::from).collect();
            if ys.is_empty() {
                0.0
            } else {
                ys.iter().sum::<f64>() / ys.len() as f64
            }
        };
        FeatureLayout {
            semantic_dim,
            encoded_dim,
            year_means: [mean(|r| r.start_year), mean(|r| r.end_year)],
        }
    }

    pub fn len(&self) -> usize {
        self.semantic_dim + self.encoded_dim + YEAR_BLOCK
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub semantic_dim: usize,
    pub encoded_dim: usize,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn semantic(&self) -> &[f64] {
        &self.values[..self.semantic_dim]
    }

    pub fn encoded(&self) -> &[f64] {
        &self.values[self.semantic_dim..self.semantic_dim + self.encoded_dim]
    }

    pub fn years(&self) -> &[f64] {
        &self.values[self.semantic_dim + self.encoded_dim..]
    }
}

pub fn assemble_features(
    layout: &FeatureLayout,
    embedding: &EmbeddingVector,
    encoded: &[f64],
    years: (Option<i32>, Option<i32>),
) -> Result<FeatureVector> {
    if embedding.len() != layout.semantic_dim {
        return Err(Error::DimensionMismatch {
            expected: layout.semantic_dim,
            actual: embedding.len(),
        });
    }
    if encoded.len() != layout.encoded_dim {
        return Err(Error::DimensionMismatch {
            expected: layout.encoded_dim,
            actual: encoded.len(),
        });
    }
    let unit = if embedding.normalized {
        embedding.clone()
    } else {
        embedding
            .normalized()
            .unwrap_or_else(|_| EmbeddingVector::raw(vec![0.0; embedding.len()]))
    };
    let mut values = Vec::with_capacity(layout.len());
    values.extend_from_slice(&unit.values);
    values.extend_from_slice(encoded);
    values.push(years.0.map_or(layout.year_means[0], f64::from));
    values.push(years.1.map_or(layout.year_means[1], f64::from));
    Ok(FeatureVector {
        values,
        semantic_dim: layout.semantic_dim,
        encoded_dim: layout.encoded_dim,
    })
}
