//! HTTP/JSON front end over trained predictor bundles.
//!
//! Loaded models are immutable; every request is answered from the artifact
//! state alone, so a restart never changes a prediction. Inference runs on
//! the blocking pool to keep the async workers free.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use thiserror::Error;
use tokio::net::TcpListener;

use cmf_core::artifact::ArtifactLayout;
use cmf_core::api::{
    ErrorBody, HealthResponse, ModelsResponse, PredictionRequest, PredictionResponse, HEALTH_PATH, MODEL_PATH,
    PREDICT_BATCH_PATH, PREDICT_PATH,
};
use cmf_core::predictor::CmfPredictor;
use cmf_core::Facility;

pub const DEFAULT_BATCH_CAP: usize = 256;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("malformed request: {0}")]
    BadRequest(String),

    #[error("no model loaded for facility `{0}`")]
    NoModel(String),

    #[error("batch of {size} requests exceeds the cap of {cap}")]
    BatchTooLarge { size: usize, cap: usize },

    #[error(transparent)]
    Core(#[from] cmf_core::Error),

    #[error("inference task failed: {0}")]
    Task(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        use cmf_core::Error as E;
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NoModel(_) => StatusCode::NOT_FOUND,
            ServiceError::BatchTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::Core(E::UnknownFeature(_) | E::UnknownFacility(_) | E::EmptyInput(_) | E::Domain(_)) => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::Core(_) | ServiceError::Task(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct AppState {
    models: BTreeMap<Facility, Arc<CmfPredictor>>,
    batch_cap: usize,
}

impl AppState {
    pub fn new(models: impl IntoIterator<Item = CmfPredictor>, batch_cap: usize) -> Self {
        AppState {
            models: models.into_iter().map(|m| (m.facility(), Arc::new(m))).collect(),
            batch_cap,
        }
    }

    /// Loads the bundles for `facilities` (all facilities when empty). With
    /// an explicit list every bundle must exist; otherwise whatever has been
    /// trained is served, as long as there is at least one.
    pub fn load(layout: &ArtifactLayout, facilities: &[Facility], batch_cap: usize) -> Result<Self, ServiceError> {
        let wanted = if facilities.is_empty() { &Facility::ALL[..] } else { facilities };
        let mut models = Vec::new();
        for &f in wanted {
            let dir = layout.model(f);
            if dir.exists() {
                models.push(CmfPredictor::load(&dir)?);
            } else if !facilities.is_empty() {
                return Err(layout.require(dir, "train").unwrap_err().into());
            }
        }
        if models.is_empty() {
            return Err(layout.require(layout.model(wanted[0]), "train").unwrap_err().into());
        }
        for m in &models {
            tracing::info!(facility = %m.facility(), version = %m.model_version(), "model loaded");
        }
        Ok(AppState::new(models, batch_cap))
    }

    pub fn facilities(&self) -> Vec<Facility> {
        self.models.keys().copied().collect()
    }

    pub fn batch_cap(&self) -> usize {
        self.batch_cap
    }

    fn model(&self, facility: Facility) -> Result<Arc<CmfPredictor>, ServiceError> {
        self.models
            .get(&facility)
            .cloned()
            .ok_or_else(|| ServiceError::NoModel(facility.to_string()))
    }

    pub fn health(&self) -> HealthResponse {
        let models: BTreeMap<Facility, String> = self.models.iter().map(|(f, m)| (*f, m.model_version())).collect();
        HealthResponse {
            status: "ok".into(),
            model_version: models
                .iter()
                .map(|(f, v)| format!("{f}:{v}"))
                .collect::<Vec<_>>()
                .join(","),
            models,
        }
    }
}

type Shared = Arc<AppState>;

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

async fn health(State(state): State<Shared>) -> Json<HealthResponse> {
    Json(state.health())
}

#[derive(Debug, Deserialize)]
struct ModelQuery {
    facility: Option<String>,
}

async fn model(State(state): State<Shared>, Query(q): Query<ModelQuery>) -> Result<Json<ModelsResponse>, ServiceError> {
    let models = match q.facility {
        None => state.models.values().map(|m| m.info()).collect(),
        Some(label) => {
            let f = Facility::from_label(&label).ok_or(cmf_core::Error::UnknownFacility(label))?;
            vec![state.model(f)?.info()]
        }
    };
    Ok(Json(ModelsResponse { models }))
}

async fn predict(State(state): State<Shared>, body: Bytes) -> Result<Json<PredictionResponse>, ServiceError> {
    let request: PredictionRequest = parse(&body)?;
    let model = state.model(request.facility)?;
    let response = tokio::task::spawn_blocking(move || model.predict(&request))
        .await
        .map_err(|e| ServiceError::Task(e.to_string()))??;
    Ok(Json(response))
}

async fn predict_batch(
    State(state): State<Shared>,
    body: Bytes,
) -> Result<Json<Vec<PredictionResponse>>, ServiceError> {
    let requests: Vec<PredictionRequest> = parse(&body)?;
    if requests.len() > state.batch_cap {
        return Err(ServiceError::BatchTooLarge {
            size: requests.len(),
            cap: state.batch_cap,
        });
    }
    // Group by facility, predict each group, then restore request order.
    let mut groups: BTreeMap<Facility, Vec<usize>> = BTreeMap::new();
    for (i, r) in requests.iter().enumerate() {
        groups.entry(r.facility).or_default().push(i);
    }
    let mut work = Vec::new();
    for (facility, idx) in groups {
        let model = state.model(facility)?;
        let batch: Vec<PredictionRequest> = idx.iter().map(|&i| requests[i].clone()).collect();
        work.push((model, idx, batch));
    }
    let n = requests.len();
    let responses = tokio::task::spawn_blocking(move || -> Result<Vec<PredictionResponse>, ServiceError> {
        let mut out: Vec<Option<PredictionResponse>> = vec![None; n];
        for (model, idx, batch) in work {
            for (i, r) in idx.into_iter().zip(model.predict_batch(&batch)?) {
                out[i] = Some(r);
            }
        }
        Ok(out.into_iter().map(|r| r.expect("every request is answered")).collect())
    })
    .await
    .map_err(|e| ServiceError::Task(e.to_string()))??;
    Ok(Json(responses))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route(HEALTH_PATH, get(health))
        .route(MODEL_PATH, get(model))
        .route(PREDICT_PATH, post(predict))
        .route(PREDICT_BATCH_PATH, post(predict_batch))
        .with_state(Arc::new(state))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), facilities = ?state.facilities(), "serving");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
