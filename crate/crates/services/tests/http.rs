use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use cbir_core::imaging;
use cbir_core::protocol::{
    make_parked, DeliveryMode, ParkedState, QueryMessage, QueryPayload, ResultMessage, ResultStatus, SearchOutcome,
    SessionAck,
};
use cbir_core::watermark;
use cbir_services::broker::{DispatchReport, RetrieveRequest};
use cbir_services::client::{BrokerClient, ProviderClient};
use cbir_services::clock::Clock;
use cbir_services::fixture::{
    Fixture, FixtureOptions, HttpFixture, ALICE_TOKEN, BROKER_PRINCIPAL, IN_PROCESS_BROKER, SPENT_TOKEN,
};
use cbir_services::http::{broker_router, provider_router, ExtractedIdentity, Health, RetrievalBatch};
use cbir_services::transport::ENVELOPE_MIME;
use cbir_services::{ErrorBody, ServiceError};
use tower::ServiceExt;

async fn call(router: &Router, request: Request<Body>) -> (StatusCode, Option<String>, Vec<u8>) {
    let resp = router.clone().oneshot(request).await.unwrap();
    let status = resp.status();
    let ct = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, ct, body)
}

fn post(uri: &str, content_type: &str, body: Vec<u8>) -> Request<Body> {
    Request::builder()
        .method(Method::POST)
        .uri(uri)
        .header(header::CONTENT_TYPE, content_type)
        .body(Body::from(body))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::builder().uri(uri).body(Body::empty()).unwrap()
}

fn error_code(body: &[u8]) -> String {
    serde_json::from_slice::<ErrorBody>(body).unwrap().error
}

fn parked_bytes(fx: &Fixture, mode: DeliveryMode) -> Vec<u8> {
    let state = ParkedState {
        broker_url: IN_PROCESS_BROKER.into(),
        reply_address: None,
        mode,
        initial_query: None,
        k: 3,
    };
    make_parked(&state, &fx.client_signer(), fx.clock.now()).unwrap().encode()
}

async fn open(fx: &Fixture, router: &Router) -> String {
    let (status, _, body) = call(router, post("/agents", ENVELOPE_MIME, parked_bytes(fx, DeliveryMode::Messages))).await;
    assert_eq!(status, StatusCode::CREATED);
    SessionAck::decode(&body).unwrap().session_id
}

#[tokio::test]
async fn broker_agent_endpoint() {
    let fx = Fixture::new(FixtureOptions::default()).unwrap();
    let router = broker_router(fx.broker.clone());

    let (status, _, body) = call(&router, post("/agents", ENVELOPE_MIME, b"garbage".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "bad_request");

    let mut tampered = parked_bytes(&fx, DeliveryMode::Messages);
    let last = tampered.len() - 1;
    tampered[last] ^= 1;
    let (status, _, body) = call(&router, post("/agents", ENVELOPE_MIME, tampered)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(error_code(&body), "trust");

    let mut req = post("/agents", ENVELOPE_MIME, parked_bytes(&fx, DeliveryMode::Messenger));
    req.headers_mut().insert(header::ACCEPT, "application/json".parse().unwrap());
    let (status, ct, body) = call(&router, req).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(ct.as_deref(), Some("application/json"));
    let ack: SessionAck = serde_json::from_slice(&body).unwrap();
    assert_eq!(ack.mode, DeliveryMode::Messenger);
    assert_eq!(fx.broker.session_count(), 1);
}

#[tokio::test]
async fn broker_query_negotiates_json_and_binary() {
    let fx = Fixture::new(FixtureOptions::default()).unwrap();
    let router = broker_router(fx.broker.clone());
    let sid = open(&fx, &router).await;
    let message = QueryMessage {
        session_id: sid.clone(),
        query: QueryPayload::Image(fx.files.image_bytes(0, 3)),
        k: 4,
    };

    let uri = format!("/sessions/{sid}/query");
    let (status, ct, body) = call(&router, post(&uri, "application/octet-stream", message.encode())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("application/octet-stream"));
    let binary = ResultMessage::decode(&body).unwrap();
    assert_eq!(binary.results[0].image_id, "img03");

    let json = serde_json::to_vec(&message).unwrap();
    let (status, ct, body) = call(&router, post(&uri, "application/json", json)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("application/json"));
    let value: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(value["status"]["state"], "ok");
    assert!(value["results"][0]["thumbnail"].is_string());
    let parsed: ResultMessage = serde_json::from_value(value).unwrap();
    assert_eq!(parsed, binary);

    let (status, _, body) = call(&router, get(&format!("/sessions/{sid}/result"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ResultMessage::decode(&body).unwrap(), binary);
    let mut req = get(&format!("/sessions/{sid}/result"));
    req.headers_mut().insert(header::ACCEPT, "application/json".parse().unwrap());
    let (_, ct, _) = call(&router, req).await;
    assert_eq!(ct.as_deref(), Some("application/json"));

    let bad_k = QueryMessage { k: 0, ..message.clone() };
    let (status, _, _) = call(&router, post(&uri, "application/octet-stream", bad_k.encode())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let undecodable = QueryMessage {
        query: QueryPayload::Image(b"junk".to_vec()),
        ..message.clone()
    };
    let (status, _, body) = call(&router, post(&uri, "application/octet-stream", undecodable.encode())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&body), "input");
    let other = QueryMessage {
        session_id: "missing".into(),
        ..message
    };
    let (status, _, body) = call(&router, post("/sessions/missing/query", "application/octet-stream", other.encode())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "not_found");
}

#[tokio::test]
async fn broker_retrieval_reindex_watermark_and_health() {
    let fx = Fixture::new(FixtureOptions::default()).unwrap();
    let router = broker_router(fx.broker.clone());
    let sid = open(&fx, &router).await;

    let (status, _, body) = call(&router, post("/admin/reindex", "application/json", vec![])).await;
    assert_eq!(status, StatusCode::OK);
    let report: DispatchReport = serde_json::from_slice(&body).unwrap();
    assert_eq!((report.dispatched, report.index_entries), (2, 20));

    let items = serde_json::json!({"items": [
        {"provider_url": fx.provider_url(0), "image_id": "img01", "token": ALICE_TOKEN, "purchaser_id": "alice"},
        {"provider_url": fx.provider_url(1), "image_id": "img01", "token": SPENT_TOKEN, "purchaser_id": "carol"},
    ]});
    let uri = format!("/sessions/{sid}/retrieve");
    let (status, _, body) = call(&router, post(&uri, "application/json", items.to_string().into_bytes())).await;
    assert_eq!(status, StatusCode::OK);
    let value: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(value["items"][0]["outcome"], "image");
    assert_eq!(value["items"][1]["outcome"], "access_denied");
    let batch: RetrievalBatch = serde_json::from_value(value).unwrap();
    let SearchOutcome::Image { bytes, .. } = &batch.items[0].outcome else {
        panic!("expected image");
    };

    let (status, _, body) = call(&router, post("/watermark/extract", "image/png", bytes.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let id: ExtractedIdentity = serde_json::from_slice(&body).unwrap();
    assert_eq!(id.identity.as_deref(), Some("alice"));
    let (_, _, body) = call(&router, post("/watermark/extract", "image/png", fx.files.image_bytes(0, 1))).await;
    assert_eq!(serde_json::from_slice::<ExtractedIdentity>(&body).unwrap().identity, None);

    let (status, _, _) = call(&router, post(&uri, "application/json", b"{".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _, body) = call(&router, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    let health: Health = serde_json::from_slice(&body).unwrap();
    assert_eq!((health.size, health.index_entries), (1, Some(20)));
}

#[tokio::test]
async fn provider_endpoint_sweep() {
    let fx = Fixture::new(FixtureOptions::default()).unwrap();
    let router = provider_router(fx.nodes[0].clone());

    // thumbnails are free; full images need a license
    let (status, ct, body) = call(&router, get("/images/img00/thumbnail")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("image/png"));
    assert!(imaging::png_dimensions(&body).unwrap().0 <= 96);
    let (status, _, _) = call(&router, get("/images/nope/thumbnail")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    for j in 0..10 {
        let uri = format!("/images/img{j:02}/retrieve");
        let (status, _, body) = call(&router, post(&uri, "application/json", br#"{"purchaser_id":"alice"}"#.to_vec())).await;
        assert_eq!(status, StatusCode::FORBIDDEN);
        assert_eq!(error_code(&body), "access_denied");
        let (status, _, _) = call(&router, get(&uri)).await;
        assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED);
    }
    let body = serde_json::json!({"token": ALICE_TOKEN, "purchaser_id": "alice"}).to_string().into_bytes();
    let (status, ct, bytes) = call(&router, post("/images/img01/retrieve", "application/json", body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("image/png"));
    assert_eq!(watermark::extract_from_bytes(&bytes).as_deref(), Some("alice"));
    let (_, ct, _) = call(&router, post("/images/img00/retrieve", "application/json", body.clone())).await;
    assert_eq!(ct.as_deref(), Some("image/x-portable-graymap"));
    let (status, _, _) = call(&router, post("/images/img00/retrieve", "application/json", b"[]".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _, body) = call(&router, post("/agents", ENVELOPE_MIME, vec![1, 2, 3])).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "bad_request");
    // a client-signed parked agent is not something a provider hosts
    let (status, _, _) = call(&router, post("/agents", ENVELOPE_MIME, parked_bytes(&fx, DeliveryMode::Messages))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _, body) = call(&router, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Health>(&body).unwrap().size, 10);
}

fn client(fx: &HttpFixture) -> BrokerClient {
    BrokerClient::new(&fx.broker_url, fx.files.client_keys().unwrap(), BROKER_PRINCIPAL)
}

#[tokio::test(flavor = "multi_thread")]
async fn end_to_end_over_loopback_http() {
    let fx = HttpFixture::start(FixtureOptions::default()).await.unwrap();
    let c = client(&fx);
    assert_eq!(c.health().await.unwrap().status, "ok");

    let query = QueryPayload::Image(fx.files.image_bytes(1, 4));
    let ack = c.open_session(DeliveryMode::Messenger, Some(query.clone()), 3, None).await.unwrap();
    let retained = c.collect(&ack.session_id).await.unwrap();
    assert_eq!(retained.status, ResultStatus::Ok);
    assert_eq!(retained.results[0].image_id, "img04");
    assert_eq!(retained.results[0].provider_url, fx.provider_urls[1]);

    let via_messenger = c.query(&ack.session_id, DeliveryMode::Messenger, query.clone(), 5).await.unwrap();
    let messages = c.open_session(DeliveryMode::Messages, None, 5, None).await.unwrap();
    let via_messages = c.query(&messages.session_id, DeliveryMode::Messages, query, 5).await.unwrap();
    assert_eq!(via_messenger.results, via_messages.results);
    assert_eq!(c.poll(&messages.session_id).await.unwrap(), via_messages);

    let top = &via_messages.results[0];
    let items = c
        .retrieve(
            &messages.session_id,
            vec![RetrieveRequest {
                provider_url: top.provider_url.clone(),
                image_id: top.image_id.clone(),
                token: ALICE_TOKEN.into(),
                purchaser_id: "alice".into(),
            }],
        )
        .await
        .unwrap();
    let SearchOutcome::Image { bytes, .. } = &items[0].outcome else {
        panic!("expected image, got {:?}", items[0].outcome);
    };
    assert_eq!(c.extract_watermark(bytes.clone()).await.unwrap().as_deref(), Some("alice"));

    let provider = ProviderClient::new(&fx.provider_urls[0]);
    assert!(imaging::png_dimensions(&provider.thumbnail("img02").await.unwrap()).is_ok());
    let direct = provider.retrieve("img02", ALICE_TOKEN, "alice").await.unwrap();
    assert_eq!(watermark::extract_from_bytes(&direct).as_deref(), Some("alice"));
    assert!(matches!(
        provider.retrieve("img02", "", "alice").await,
        Err(ServiceError::AccessDenied(_))
    ));
    assert!(matches!(c.poll("missing").await, Err(ServiceError::NotFound(_))));
}

#[tokio::test(flavor = "multi_thread")]
async fn client_errors_map_to_service_errors() {
    let fx = HttpFixture::start(FixtureOptions {
        providers: 1,
        images_per_provider: 2,
        ..FixtureOptions::default()
    })
    .await
    .unwrap();
    let stranger = BrokerClient::new(
        &fx.broker_url,
        cbir_core::protocol::KeyRing::new("alice").with_peer(BROKER_PRINCIPAL, cbir_core::protocol::Secret::new(b"wrong".to_vec())),
        BROKER_PRINCIPAL,
    );
    assert!(matches!(
        stranger.open_session(DeliveryMode::Messages, None, 3, None).await,
        Err(ServiceError::Trust(_))
    ));
    let nowhere = BrokerClient::new("http://127.0.0.1:1", fx.files.client_keys().unwrap(), BROKER_PRINCIPAL);
    assert!(matches!(nowhere.health().await, Err(ServiceError::Network(_))));
}

#[tokio::test(flavor = "multi_thread")]
async fn stopped_provider_leaves_a_partial_index() {
    let fx = HttpFixture::start(FixtureOptions::default()).await.unwrap();
    fx.stop_provider(0);
    let c = client(&fx);
    let report = c.reindex().await.unwrap();
    assert_eq!(report.merged.len(), 1);
    assert_eq!(report.failed.len(), 1);
    assert_eq!(report.failed[0].provider_url, fx.provider_urls[0]);
    let ack = c.open_session(DeliveryMode::Messages, None, 3, None).await.unwrap();
    let r = c
        .query(&ack.session_id, DeliveryMode::Messages, QueryPayload::Image(fx.files.image_bytes(1, 0)), 20)
        .await
        .unwrap();
    assert_eq!(r.results.len(), 10);
    assert_eq!(r.results[0].image_id, "img00");
}
