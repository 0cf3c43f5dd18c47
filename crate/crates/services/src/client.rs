//! HTTP clients for the broker and providers.

use std::time::Duration;

use cbir_core::protocol::{
    make_messenger, make_parked, AgentEnvelope, AgentKind, DeliveryMode, KeyRing, MessengerCargo, ParkedState,
    QueryMessage, QueryPayload, ResultMessage, SessionAck, Signer,
};
use cbir_core::Timestamp;

use crate::broker::{DispatchReport, RetrievalItem, RetrieveRequest};
use crate::http::{ExtractedIdentity, FullImageRequest, Health, RetrievalBatch, RetrieveBatch};
use crate::transport::{network_error, read_response, ENVELOPE_MIME, MESSAGE_MIME};
use crate::ServiceError;

fn http_client(timeout: Duration) -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(timeout)
        .build()
        .expect("HTTP client without TLS builds")
}

fn to_json(value: &impl serde::Serialize) -> Vec<u8> {
    serde_json::to_vec(value).expect("request bodies serialize")
}

async fn json<T: serde::de::DeserializeOwned>(url: &str, resp: reqwest::Response) -> Result<T, ServiceError> {
    let body = read_response(url, resp).await?;
    serde_json::from_slice(&body).map_err(|e| ServiceError::Network(format!("{url}: unexpected reply: {e}")))
}

pub struct BrokerClient {
    base_url: String,
    http: reqwest::Client,
    keys: KeyRing,
    broker_principal: String,
    validity: Duration,
}

impl BrokerClient {
    /// `keys` holds the client's principal and the secret it shares with the broker.
    pub fn new(base_url: impl Into<String>, keys: KeyRing, broker_principal: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http: http_client(Duration::from_secs(300)),
            keys,
            broker_principal: broker_principal.into(),
            validity: Duration::from_secs(300),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    fn signer(&self) -> Result<Signer, ServiceError> {
        self.keys
            .signer_for(&self.broker_principal, self.keys.principal(), self.validity)
            .ok_or_else(|| ServiceError::Trust(format!("no secret shared with {:?}", self.broker_principal)))
    }

    async fn send_agent(&self, envelope: &AgentEnvelope) -> Result<Vec<u8>, ServiceError> {
        let url = self.url("/agents");
        let resp = self
            .http
            .post(&url)
            .header(reqwest::header::CONTENT_TYPE, ENVELOPE_MIME)
            .body(envelope.encode())
            .send()
            .await
            .map_err(|e| network_error(&url, e))?;
        read_response(&url, resp).await
    }

    /// Parks an agent at the broker and returns the new session.
    pub async fn open_session(
        &self,
        mode: DeliveryMode,
        initial_query: Option<QueryPayload>,
        k: u32,
        reply_address: Option<String>,
    ) -> Result<SessionAck, ServiceError> {
        let state = ParkedState {
            broker_url: self.base_url.clone(),
            reply_address,
            mode,
            initial_query,
            k,
        };
        let envelope = make_parked(&state, &self.signer()?, Timestamp::now())?;
        let body = self.send_agent(&envelope).await?;
        Ok(SessionAck::decode(&body)?)
    }

    /// Runs a query in the session's delivery mode.
    pub async fn query(
        &self,
        session_id: &str,
        mode: DeliveryMode,
        query: QueryPayload,
        k: u32,
    ) -> Result<ResultMessage, ServiceError> {
        let message = QueryMessage {
            session_id: session_id.to_string(),
            query,
            k,
        };
        match mode {
            DeliveryMode::Messenger => self.messenger(MessengerCargo::Query(message)).await,
            DeliveryMode::Messages => {
                let url = self.url(&format!("/sessions/{session_id}/query"));
                let resp = self
                    .http
                    .post(&url)
                    .header(reqwest::header::CONTENT_TYPE, MESSAGE_MIME)
                    .body(message.encode())
                    .send()
                    .await
                    .map_err(|e| network_error(&url, e))?;
                Ok(ResultMessage::decode(&read_response(&url, resp).await?)?)
            }
        }
    }

    /// Asks a messenger-mode session for its last result.
    pub async fn collect(&self, session_id: &str) -> Result<ResultMessage, ServiceError> {
        self.messenger(MessengerCargo::Collect {
            session_id: session_id.to_string(),
        })
        .await
    }

    async fn messenger(&self, cargo: MessengerCargo) -> Result<ResultMessage, ServiceError> {
        let sent = make_messenger(&self.base_url, &cargo, &self.signer()?, Timestamp::now())?;
        let reply = AgentEnvelope::decode(&self.send_agent(&sent).await?)?;
        self.keys.verify_kind(&reply, AgentKind::Messenger, Timestamp::now())?;
        if reply.certificate.issuer != self.broker_principal || reply.agent_id != sent.agent_id {
            return Err(ServiceError::Trust("messenger came back from an unexpected host".into()));
        }
        match MessengerCargo::decode(&reply.state)? {
            MessengerCargo::Result(r) => Ok(r),
            _ => Err(ServiceError::Network("messenger returned without a result".into())),
        }
    }

    /// Polls the session's last result.
    pub async fn poll(&self, session_id: &str) -> Result<ResultMessage, ServiceError> {
        let url = self.url(&format!("/sessions/{session_id}/result"));
        let resp = self.http.get(&url).send().await.map_err(|e| network_error(&url, e))?;
        Ok(ResultMessage::decode(&read_response(&url, resp).await?)?)
    }

    pub async fn retrieve(
        &self,
        session_id: &str,
        items: Vec<RetrieveRequest>,
    ) -> Result<Vec<RetrievalItem>, ServiceError> {
        let url = self.url(&format!("/sessions/{session_id}/retrieve"));
        let resp = self
            .http
            .post(&url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(to_json(&RetrieveBatch { items }))
            .send()
            .await
            .map_err(|e| network_error(&url, e))?;
        Ok(json::<RetrievalBatch>(&url, resp).await?.items)
    }

    pub async fn reindex(&self) -> Result<DispatchReport, ServiceError> {
        let url = self.url("/admin/reindex");
        let resp = self.http.post(&url).send().await.map_err(|e| network_error(&url, e))?;
        json(&url, resp).await
    }

    pub async fn extract_watermark(&self, image: Vec<u8>) -> Result<Option<String>, ServiceError> {
        let url = self.url("/watermark/extract");
        let resp = self.http.post(&url).body(image).send().await.map_err(|e| network_error(&url, e))?;
        Ok(json::<ExtractedIdentity>(&url, resp).await?.identity)
    }

    pub async fn health(&self) -> Result<Health, ServiceError> {
        let url = self.url("/health");
        let resp = self.http.get(&url).send().await.map_err(|e| network_error(&url, e))?;
        json(&url, resp).await
    }
}

/// Direct access to a provider's free thumbnails and licensed downloads.
pub struct ProviderClient {
    base_url: String,
    http: reqwest::Client,
}

impl ProviderClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http: http_client(Duration::from_secs(120)),
        }
    }

    pub async fn thumbnail(&self, image_id: &str) -> Result<Vec<u8>, ServiceError> {
        let url = format!("{}/images/{image_id}/thumbnail", self.base_url);
        let resp = self.http.get(&url).send().await.map_err(|e| network_error(&url, e))?;
        read_response(&url, resp).await
    }

    /// The watermarked full image.
    pub async fn retrieve(&self, image_id: &str, token: &str, purchaser_id: &str) -> Result<Vec<u8>, ServiceError> {
        let url = format!("{}/images/{image_id}/retrieve", self.base_url);
        let resp = self
            .http
            .post(&url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(to_json(&FullImageRequest {
                token: token.to_string(),
                purchaser_id: purchaser_id.to_string(),
            }))
            .send()
            .await
            .map_err(|e| network_error(&url, e))?;
        read_response(&url, resp).await
    }
}
