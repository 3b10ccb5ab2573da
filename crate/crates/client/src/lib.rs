//! Typed async client for the prediction service.

use std::time::Duration;

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use cmf_core::api::{
    ErrorBody, HealthResponse, ModelInfo, ModelsResponse, PredictionRequest, PredictionResponse, HEALTH_PATH,
    MODEL_PATH, PREDICT_BATCH_PATH, PREDICT_PATH,
};
use cmf_core::Facility;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },

    /// The service answered with a non-success status.
    #[error("service returned {status}: {message}")]
    Api { status: StatusCode, message: String },

    #[error("unreadable response from {url}: {source}")]
    Decode {
        url: String,
        #[source]
        source: reqwest::Error,
    },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct CmfClient {
    base: String,
    http: reqwest::Client,
}

impl CmfClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("default client configuration is valid");
        Self::with_http(base, http)
    }

    pub fn with_http(base: impl Into<String>, http: reqwest::Client) -> Self {
        let mut base = base.into();
        while base.ends_with('/') {
            base.pop();
        }
        if !base.contains("://") {
            base = format!("http://{base}");
        }
        CmfClient { base, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn health(&self) -> Result<HealthResponse> {
        self.send(self.http.get(self.url(HEALTH_PATH)), HEALTH_PATH).await
    }

    pub async fn models(&self, facility: Option<Facility>) -> Result<Vec<ModelInfo>> {
        let path = match facility {
            Some(f) => format!("{MODEL_PATH}?facility={}", f.as_str()),
            None => MODEL_PATH.to_string(),
        };
        let body: ModelsResponse = self.send(self.http.get(self.url(&path)), &path).await?;
        Ok(body.models)
    }

    pub async fn predict(&self, request: &PredictionRequest) -> Result<PredictionResponse> {
        self.post(PREDICT_PATH, request).await
    }

    /// Responses come back in request order.
    pub async fn predict_batch(&self, requests: &[PredictionRequest]) -> Result<Vec<PredictionResponse>> {
        self.post(PREDICT_BATCH_PATH, &requests).await
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.send(self.http.post(self.url(path)).json(body), path).await
    }

    async fn send<T: DeserializeOwned>(&self, req: reqwest::RequestBuilder, path: &str) -> Result<T> {
        let url = self.url(path);
        let resp = req.send().await.map_err(|source| ClientError::Transport {
            url: url.clone(),
            source,
        })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            return Err(ClientError::Api { status, message });
        }
        resp.json().await.map_err(|source| ClientError::Decode { url, source })
    }
}
