use std::collections::BTreeMap;
use std::sync::Arc;

use cmf_client::{ClientError, CmfClient};
use cmf_core::api::PredictionRequest;
use cmf_core::encoder::EncoderBackbone;
use cmf_core::predictor::CmfPredictor;
use cmf_core::regressor::TrainConfig;
use cmf_core::synthetic::{generate, SyntheticConfig};
use cmf_core::Facility;
use cmf_service::{serve, AppState};
use reqwest::StatusCode;

fn model() -> CmfPredictor {
    let ds = generate(&SyntheticConfig {
        records: 60,
        facility: Facility::Intersection,
        ..Default::default()
    })
    .unwrap();
    let config = TrainConfig {
        hidden_widths: vec![8],
        epochs: 5,
        ..Default::default()
    };
    CmfPredictor::fit(&ds, Arc::new(EncoderBackbone::hashing(32)), 100.0, &config).unwrap().0
}

async fn start(model: CmfPredictor, cap: usize) -> (CmfClient, tokio::sync::oneshot::Sender<()>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(serve(listener, AppState::new([model], cap), async {
        let _ = rx.await;
    }));
    (CmfClient::new(addr.to_string()), tx)
}

fn request(name: &str) -> PredictionRequest {
    PredictionRequest {
        facility: Facility::Intersection,
        countermeasure_name: name.into(),
        context: BTreeMap::from([("traffic_control_type".to_string(), Some("Signalized".to_string()))]),
        start_year: Some(2010),
        end_year: None,
    }
}

#[tokio::test]
async fn client_round_trips_every_endpoint() {
    let fixture = model();
    let offline = fixture.predict(&request("install lighting at crossings")).unwrap();
    let version = fixture.model_version();
    let (client, stop) = start(fixture, 8).await;

    let health = client.health().await.unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.models[&Facility::Intersection], version);

    let models = client.models(Some(Facility::Intersection)).await.unwrap();
    assert_eq!(models[0].model_version, version);

    let online = client.predict(&request("install lighting at crossings")).await.unwrap();
    assert_eq!(online, offline);

    let batch = [request("a"), request("install lighting at crossings"), request("b")];
    let responses = client.predict_batch(&batch).await.unwrap();
    assert_eq!(responses.len(), 3);
    assert_eq!(responses[1], offline);
    stop.send(()).unwrap();
}

#[tokio::test]
async fn api_errors_carry_status_and_message() {
    let (client, stop) = start(model(), 2).await;
    let mut roadway = request("x");
    roadway.facility = Facility::Roadway;
    let err = client.predict(&roadway).await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::NOT_FOUND));
    assert!(err.to_string().contains("roadway"));

    let err = client.predict_batch(&[request("a"), request("b"), request("c")]).await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::PAYLOAD_TOO_LARGE));

    let mut typo = request("x");
    typo.context.insert("colour".into(), Some("red".into()));
    let err = client.predict(&typo).await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::BAD_REQUEST));
    stop.send(()).unwrap();
}

#[tokio::test]
async fn unreachable_service_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = CmfClient::new(format!("http://{addr}/")).health().await.unwrap_err();
    assert!(matches!(err, ClientError::Transport { .. }), "{err}");
}
