//! HTTP routers for the broker and provider.
//!
//! Agents always travel in the canonical binary encoding. Query and result
//! messages are binary by default and JSON when the request body is JSON or
//! the client accepts JSON. Errors are JSON `{"error", "message"}` bodies.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cbir_core::protocol::{AgentEnvelope, QueryMessage, ResultMessage};
use cbir_core::watermark;
use serde::{Deserialize, Serialize};

use crate::broker::{AgentReply, Broker, DispatchReport, RetrievalItem, RetrieveRequest};
use crate::provider::ProviderNode;
use crate::transport::{ENVELOPE_MIME, MESSAGE_MIME};
use crate::ServiceError;

pub const BODY_LIMIT: usize = 64 * 1024 * 1024;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (self.status(), Json(self.body())).into_response()
    }
}

fn header_mentions_json(headers: &HeaderMap, name: header::HeaderName) -> bool {
    headers
        .get(name)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("json"))
}

fn binary(content_type: &'static str, body: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static(content_type))], body).into_response()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub principal: String,
    /// Sessions (broker) or archive images (provider).
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_entries: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrieveBatch {
    pub items: Vec<RetrieveRequest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalBatch {
    pub items: Vec<RetrievalItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedIdentity {
    pub identity: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FullImageRequest {
    #[serde(default)]
    pub token: String,
    pub purchaser_id: String,
}

pub fn broker_router(broker: Arc<Broker>) -> Router {
    Router::new()
        .route("/agents", post(broker_agents))
        .route("/sessions/{id}/query", post(broker_query))
        .route("/sessions/{id}/result", get(broker_result))
        .route("/sessions/{id}/retrieve", post(broker_retrieve))
        .route("/admin/reindex", post(broker_reindex))
        .route("/watermark/extract", post(watermark_extract))
        .route("/health", get(broker_health))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(broker)
}

async fn broker_agents(State(broker): State<Arc<Broker>>, headers: HeaderMap, body: Bytes) -> Response {
    let envelope = match AgentEnvelope::decode(&body) {
        Ok(e) => e,
        Err(e) => return ServiceError::from(e).into_response(),
    };
    match broker.handle_agent(envelope).await {
        Ok(AgentReply::Session(ack)) if header_mentions_json(&headers, header::ACCEPT) => {
            (StatusCode::CREATED, Json(ack)).into_response()
        }
        Ok(AgentReply::Session(ack)) => (StatusCode::CREATED, binary(MESSAGE_MIME, ack.encode())).into_response(),
        Ok(AgentReply::Agent(env)) => binary(ENVELOPE_MIME, env.encode()),
        Err(e) => e.into_response(),
    }
}

fn result_response(wants_json: bool, result: ResultMessage) -> Response {
    if wants_json {
        Json(result).into_response()
    } else {
        binary(MESSAGE_MIME, result.encode())
    }
}

async fn broker_query(
    State(broker): State<Arc<Broker>>,
    Path(session_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let json_body = header_mentions_json(&headers, header::CONTENT_TYPE);
    let message = if json_body {
        serde_json::from_slice::<QueryMessage>(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))
    } else {
        QueryMessage::decode(&body).map_err(ServiceError::from)
    };
    let wants_json = json_body || header_mentions_json(&headers, header::ACCEPT);
    match message {
        Ok(m) => match broker.handle_query_message(&session_id, m).await {
            Ok(r) => result_response(wants_json, r),
            Err(e) => e.into_response(),
        },
        Err(e) => e.into_response(),
    }
}

async fn broker_result(State(broker): State<Arc<Broker>>, Path(session_id): Path<String>, headers: HeaderMap) -> Response {
    match broker.poll_result(&session_id) {
        Ok(r) => result_response(header_mentions_json(&headers, header::ACCEPT), r),
        Err(e) => e.into_response(),
    }
}

async fn broker_retrieve(
    State(broker): State<Arc<Broker>>,
    Path(session_id): Path<String>,
    body: Bytes,
) -> Result<Json<RetrievalBatch>, ServiceError> {
    let batch: RetrieveBatch = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let items = broker.retrieve(&session_id, &batch.items).await?;
    Ok(Json(RetrievalBatch { items }))
}

async fn broker_reindex(State(broker): State<Arc<Broker>>) -> Json<DispatchReport> {
    Json(broker.reindex_all().await)
}

async fn watermark_extract(body: Bytes) -> Result<Json<ExtractedIdentity>, ServiceError> {
    let identity = blocking(move || Ok(watermark::extract_from_bytes(&body))).await?;
    Ok(Json(ExtractedIdentity { identity }))
}

async fn broker_health(State(broker): State<Arc<Broker>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        principal: broker.principal().to_string(),
        size: broker.session_count(),
        index_entries: Some(broker.index_len()),
    })
}

pub fn provider_router(node: Arc<ProviderNode>) -> Router {
    Router::new()
        .route("/agents", post(provider_agents))
        .route("/images/{id}/thumbnail", get(provider_thumbnail))
        .route("/images/{id}/retrieve", post(provider_retrieve))
        .route("/health", get(provider_health))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(node)
}

async fn provider_agents(State(node): State<Arc<ProviderNode>>, body: Bytes) -> Response {
    let reply = blocking(move || {
        let envelope = AgentEnvelope::decode(&body)?;
        node.handle_agent(&envelope)
    })
    .await;
    match reply {
        Ok(env) => binary(ENVELOPE_MIME, env.encode()),
        Err(e) => e.into_response(),
    }
}

async fn provider_thumbnail(State(node): State<Arc<ProviderNode>>, Path(image_id): Path<String>) -> Response {
    match blocking(move || node.get_thumbnail(&image_id)).await {
        Ok(png) => binary("image/png", png),
        Err(e) => e.into_response(),
    }
}

async fn provider_retrieve(
    State(node): State<Arc<ProviderNode>>,
    Path(image_id): Path<String>,
    body: Bytes,
) -> Response {
    let request = match serde_json::from_slice::<FullImageRequest>(&body) {
        Ok(r) => r,
        Err(e) => return ServiceError::BadRequest(e.to_string()).into_response(),
    };
    match blocking(move || node.retrieve_full(&image_id, &request.token, &request.purchaser_id)).await {
        Ok((format, bytes)) => binary(format.mime(), bytes),
        Err(e) => e.into_response(),
    }
}

async fn provider_health(State(node): State<Arc<ProviderNode>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        principal: node.principal().to_string(),
        size: node.archive().len(),
        index_entries: None,
    })
}
