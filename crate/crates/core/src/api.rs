//! JSON bodies exchanged with the prediction service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use crate::predictor::{ModelInfo, Nature, PredictionRequest, PredictionResponse};
use crate::schema::Facility;

pub const HEALTH_PATH: &str = "/health";
pub const MODEL_PATH: &str = "/model";
pub const PREDICT_PATH: &str = "/predict";
pub const PREDICT_BATCH_PATH: &str = "/predict/batch";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    /// `facility:version` for each loaded model, comma separated.
    pub model_version: String,
    pub models: BTreeMap<Facility, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsResponse {
    pub models: Vec<ModelInfo>,
}

/// Error body shared by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
