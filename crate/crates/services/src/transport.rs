//! How the broker reaches providers and client reply addresses.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use cbir_core::protocol::AgentEnvelope;
use parking_lot::RwLock;

use crate::provider::ProviderNode;
use crate::ServiceError;

pub const ENVELOPE_MIME: &str = "application/x-cbir-agent";
pub const MESSAGE_MIME: &str = "application/octet-stream";

/// Sends an agent to a provider and waits for it to come back.
#[async_trait]
pub trait ProviderTransport: Send + Sync {
    async fn send_agent(&self, provider_url: &str, envelope: AgentEnvelope) -> Result<AgentEnvelope, ServiceError>;
}

/// Delivers results pushed to a client's reply address.
#[async_trait]
pub trait ReplySink: Send + Sync {
    /// `body` is an encoded messenger envelope or result message, tagged by `content_type`.
    async fn push(&self, address: &str, content_type: &str, body: Vec<u8>) -> Result<(), ServiceError>;
}

fn join(base: &str, path: &str) -> String {
    format!("{}{path}", base.trim_end_matches('/'))
}

pub(crate) fn network_error(url: &str, e: reqwest::Error) -> ServiceError {
    ServiceError::Network(format!("{url}: {e}"))
}

pub(crate) async fn read_response(url: &str, resp: reqwest::Response) -> Result<Vec<u8>, ServiceError> {
    let status = resp.status();
    let body = resp.bytes().await.map_err(|e| network_error(url, e))?.to_vec();
    if status.is_success() {
        Ok(body)
    } else {
        let status = axum::http::StatusCode::from_u16(status.as_u16()).unwrap_or(axum::http::StatusCode::BAD_GATEWAY);
        Err(ServiceError::from_body(status, &body))
    }
}

/// Agents travel as `POST {provider}/agents` with the canonical encoding.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        Self {
            client: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("HTTP client without TLS builds"),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

#[async_trait]
impl ProviderTransport for HttpTransport {
    async fn send_agent(&self, provider_url: &str, envelope: AgentEnvelope) -> Result<AgentEnvelope, ServiceError> {
        let url = join(provider_url, "/agents");
        let resp = self
            .client
            .post(&url)
            .header(reqwest::header::CONTENT_TYPE, ENVELOPE_MIME)
            .body(envelope.encode())
            .send()
            .await
            .map_err(|e| network_error(&url, e))?;
        let body = read_response(&url, resp).await?;
        AgentEnvelope::decode(&body).map_err(|e| ServiceError::Network(format!("{url}: bad agent reply: {e}")))
    }
}

#[async_trait]
impl ReplySink for HttpTransport {
    async fn push(&self, address: &str, content_type: &str, body: Vec<u8>) -> Result<(), ServiceError> {
        let url = join(address, "/results");
        let resp = self
            .client
            .post(&url)
            .header(reqwest::header::CONTENT_TYPE, content_type)
            .body(body)
            .send()
            .await
            .map_err(|e| network_error(&url, e))?;
        read_response(&url, resp).await.map(|_| ())
    }
}

/// Providers hosted in the same process, addressed by their public URL.
/// Every envelope still crosses an encode/decode boundary.
#[derive(Default, Clone)]
pub struct InProcessTransport {
    nodes: Arc<RwLock<HashMap<String, Arc<ProviderNode>>>>,
}

impl InProcessTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, node: Arc<ProviderNode>) {
        self.nodes.write().insert(node.public_url().to_string(), node);
    }

    /// Makes a provider unreachable.
    pub fn unregister(&self, url: &str) -> Option<Arc<ProviderNode>> {
        self.nodes.write().remove(url)
    }
}

#[async_trait]
impl ProviderTransport for InProcessTransport {
    async fn send_agent(&self, provider_url: &str, envelope: AgentEnvelope) -> Result<AgentEnvelope, ServiceError> {
        let node = self
            .nodes
            .read()
            .get(provider_url)
            .cloned()
            .ok_or_else(|| ServiceError::Network(format!("{provider_url}: connection refused")))?;
        let inbound = AgentEnvelope::decode(&envelope.encode())?;
        let reply = tokio::task::spawn_blocking(move || node.handle_agent(&inbound))
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))??;
        Ok(AgentEnvelope::decode(&reply.encode())?)
    }
}

/// A sink that refuses every push, for deployments without client callbacks.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoReplySink;

#[async_trait]
impl ReplySink for NoReplySink {
    async fn push(&self, address: &str, _content_type: &str, _body: Vec<u8>) -> Result<(), ServiceError> {
        Err(ServiceError::Network(format!("{address}: push delivery disabled")))
    }
}
