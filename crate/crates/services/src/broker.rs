//! The broker: parked sessions, the main index and agent dispatch.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use cbir_core::gabor::{extract_feature, normalize_rotation, FilterBank, FilterBankParams, TextureFeatureVector};
use cbir_core::imaging;
use cbir_core::index::{FeatureIndex, IndexShard, MergeOutcome};
use cbir_core::protocol::{
    make_index, make_messenger, make_return, make_search, AgentEnvelope, AgentKind, DeliveryMode, IndexState,
    IndexTarget, KeyRing, MessengerCargo, ParkedState, QueryMessage, QueryPayload, ResultMessage, ResultStatus,
    SearchItem, SearchOutcome, SearchState, SearchTarget, SessionAck, Signer,
};
use cbir_core::Timestamp;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::transport::{ProviderTransport, ReplySink, ENVELOPE_MIME, MESSAGE_MIME};
use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub url: String,
    pub principal: String,
}

#[derive(Debug, Clone)]
pub struct BrokerSettings {
    pub public_url: String,
    pub providers: Vec<ProviderSpec>,
    pub reindex_max_age: Duration,
    pub session_idle_timeout: Duration,
    pub default_k: u32,
    pub bank: FilterBankParams,
    pub certificate_validity: Duration,
    pub snapshot_path: Option<PathBuf>,
}

impl BrokerSettings {
    pub fn new(public_url: impl Into<String>, providers: Vec<ProviderSpec>) -> Self {
        Self {
            public_url: public_url.into(),
            providers,
            reindex_max_age: Duration::from_secs(600),
            session_idle_timeout: Duration::from_secs(1800),
            default_k: 10,
            bank: FilterBankParams::default(),
            certificate_validity: Duration::from_secs(300),
            snapshot_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: &str| Err(ServiceError::BadRequest(format!("broker config: {m}")));
        if self.providers.is_empty() {
            return bad("at least one provider is required");
        }
        if self.reindex_max_age.is_zero() || self.session_idle_timeout.is_zero() || self.certificate_validity.is_zero()
        {
            return bad("durations must be positive");
        }
        if self.default_k == 0 {
            return bad("default_k must be at least 1");
        }
        self.bank.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))
    }
}

/// A client's parked agent, resident at the broker.
#[derive(Debug, Clone)]
pub struct ParkedSession {
    pub session_id: String,
    pub agent_id: String,
    /// Principal that signed the parked agent; only it may drive the session by messenger.
    pub owner: String,
    pub reply_address: Option<String>,
    pub mode: DeliveryMode,
    pub k: u32,
    pub last_query: Option<TextureFeatureVector>,
    pub last_result: Option<ResultMessage>,
    pub created_at: Timestamp,
    pub last_active_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedShard {
    pub provider_url: String,
    pub entries: usize,
    pub skipped: usize,
    /// `applied` or `stale`.
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderFailure {
    pub provider_url: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub dispatched: usize,
    pub merged: Vec<MergedShard>,
    pub failed: Vec<ProviderFailure>,
    pub index_entries: usize,
}

/// One requested full-image retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrieveRequest {
    pub provider_url: String,
    pub image_id: String,
    #[serde(default)]
    pub token: String,
    pub purchaser_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalItem {
    pub provider_url: String,
    pub image_id: String,
    #[serde(flatten)]
    pub outcome: SearchOutcome,
}

/// What `POST /agents` produces.
#[derive(Debug, Clone)]
pub enum AgentReply {
    Session(SessionAck),
    Agent(AgentEnvelope),
}

/// A result as it travels to the client in the session's mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Messenger(AgentEnvelope),
    Message(ResultMessage),
}

impl Delivery {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Self::Messenger(e) => e.encode(),
            Self::Message(m) => m.encode(),
        }
    }

    pub fn content_type(&self) -> &'static str {
        match self {
            Self::Messenger(_) => ENVELOPE_MIME,
            Self::Message(_) => MESSAGE_MIME,
        }
    }

    /// The carried result, whichever way it travels.
    pub fn result(&self) -> Result<ResultMessage, ServiceError> {
        match self {
            Self::Message(m) => Ok(m.clone()),
            Self::Messenger(e) => match MessengerCargo::decode(&e.state)? {
                MessengerCargo::Result(m) => Ok(m),
                _ => Err(ServiceError::BadRequest("messenger carries no result".into())),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryStatus {
    Pushed,
    /// Kept in the session for poll-based pickup.
    Retained,
}

#[derive(Debug, Default)]
struct Counters {
    index_agents: AtomicUsize,
    search_agents: AtomicUsize,
}

pub struct Broker {
    settings: BrokerSettings,
    keys: KeyRing,
    bank: Arc<FilterBank>,
    index: RwLock<FeatureIndex>,
    sessions: Mutex<HashMap<String, ParkedSession>>,
    transport: Arc<dyn ProviderTransport>,
    replies: Arc<dyn ReplySink>,
    clock: Arc<dyn Clock>,
    dispatch_gate: tokio::sync::Mutex<()>,
    counters: Counters,
}

impl Broker {
    pub fn new(
        settings: BrokerSettings,
        keys: KeyRing,
        transport: Arc<dyn ProviderTransport>,
        replies: Arc<dyn ReplySink>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ServiceError> {
        settings.validate()?;
        let bank = Arc::new(FilterBank::new(settings.bank).map_err(|e| ServiceError::BadRequest(e.to_string()))?);
        let index = match &settings.snapshot_path {
            Some(path) if path.exists() => FeatureIndex::load(path)?,
            _ => FeatureIndex::new(),
        };
        Ok(Self {
            settings,
            keys,
            bank,
            index: RwLock::new(index),
            sessions: Mutex::new(HashMap::new()),
            transport,
            replies,
            clock,
            dispatch_gate: tokio::sync::Mutex::new(()),
            counters: Counters::default(),
        })
    }

    pub fn settings(&self) -> &BrokerSettings {
        &self.settings
    }

    pub fn principal(&self) -> &str {
        self.keys.principal()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().len()
    }

    pub fn session(&self, session_id: &str) -> Option<ParkedSession> {
        self.sessions.lock().get(session_id).cloned()
    }

    pub fn index_len(&self) -> usize {
        self.index.read().len()
    }

    /// Read access to the main index.
    pub fn with_index<T>(&self, f: impl FnOnce(&FeatureIndex) -> T) -> T {
        f(&self.index.read())
    }

    pub fn index_agents_dispatched(&self) -> usize {
        self.counters.index_agents.load(Ordering::Relaxed)
    }

    pub fn search_agents_dispatched(&self) -> usize {
        self.counters.search_agents.load(Ordering::Relaxed)
    }

    fn signer_for(&self, peer: &str) -> Result<Signer, ServiceError> {
        self.keys
            .signer_for(peer, self.principal(), self.settings.certificate_validity)
            .ok_or_else(|| ServiceError::Trust(format!("no secret shared with {peer:?}")))
    }

    /// Entry point for `POST /agents`.
    pub async fn handle_agent(&self, envelope: AgentEnvelope) -> Result<AgentReply, ServiceError> {
        match envelope.kind {
            AgentKind::Parked => self.host_parked_agent(envelope).await.map(AgentReply::Session),
            AgentKind::Messenger => self.handle_messenger(envelope).await.map(AgentReply::Agent),
            other => Err(ServiceError::BadRequest(format!("the broker does not host {other} agents"))),
        }
    }

    pub async fn host_parked_agent(&self, envelope: AgentEnvelope) -> Result<SessionAck, ServiceError> {
        let now = self.clock.now();
        self.keys.verify_kind(&envelope, AgentKind::Parked, now)?;
        let state = ParkedState::decode(&envelope.state)?;
        if state.k == 0 {
            return Err(ServiceError::BadRequest("k must be at least 1".into()));
        }
        let session_id = uuid::Uuid::new_v4().to_string();
        {
            let mut sessions = self.sessions.lock();
            if sessions.values().any(|s| s.agent_id == envelope.agent_id) {
                return Err(ServiceError::Conflict(format!("agent {} is already parked", envelope.agent_id)));
            }
            sessions.insert(
                session_id.clone(),
                ParkedSession {
                    session_id: session_id.clone(),
                    agent_id: envelope.agent_id.clone(),
                    owner: envelope.certificate.issuer.clone(),
                    reply_address: state.reply_address.clone(),
                    mode: state.mode,
                    k: state.k,
                    last_query: None,
                    last_result: None,
                    created_at: now,
                    last_active_at: now,
                },
            );
        }
        tracing::info!(session = %session_id, owner = %envelope.certificate.issuer, mode = ?state.mode, "parked agent hosted");
        if let Some(query) = state.initial_query {
            if let Err(e) = self.handle_query(&session_id, query, state.k).await {
                self.record_result(
                    &session_id,
                    None,
                    ResultMessage {
                        session_id: session_id.clone(),
                        status: ResultStatus::Error(e.to_string()),
                        results: Vec::new(),
                    },
                );
            }
            if state.reply_address.is_some() {
                self.deliver_result(&session_id).await?;
            }
        }
        Ok(SessionAck {
            session_id,
            agent_id: envelope.agent_id,
            mode: state.mode,
        })
    }

    fn touch(&self, session_id: &str) -> Result<ParkedSession, ServiceError> {
        let mut sessions = self.sessions.lock();
        let s = sessions
            .get_mut(session_id)
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
        s.last_active_at = self.clock.now().max(s.last_active_at);
        Ok(s.clone())
    }

    fn record_result(&self, session_id: &str, query: Option<TextureFeatureVector>, result: ResultMessage) {
        if let Some(s) = self.sessions.lock().get_mut(session_id) {
            s.last_query = query;
            s.last_result = Some(result);
            s.last_active_at = self.clock.now().max(s.last_active_at);
        }
    }

    /// Normalized query feature from either payload form.
    pub async fn query_feature(&self, payload: QueryPayload) -> Result<TextureFeatureVector, ServiceError> {
        match payload {
            QueryPayload::Feature(f) => {
                let want = (self.bank.scales(), self.bank.orientations());
                if (f.scales(), f.orientations()) != want {
                    return Err(ServiceError::BadRequest(format!(
                        "query feature is {}x{}, the index uses {}x{}",
                        f.scales(),
                        f.orientations(),
                        want.0,
                        want.1
                    )));
                }
                Ok(normalize_rotation(&f))
            }
            QueryPayload::Image(bytes) => {
                let bank = self.bank.clone();
                tokio::task::spawn_blocking(move || {
                    let image = imaging::load_for_indexing(&bytes)?;
                    Ok(extract_feature(&image, &bank))
                })
                .await
                .map_err(|e| ServiceError::Internal(e.to_string()))?
            }
        }
    }

    /// Ranks the index against the query after re-indexing stale providers.
    pub async fn handle_query(
        &self,
        session_id: &str,
        payload: QueryPayload,
        k: u32,
    ) -> Result<ResultMessage, ServiceError> {
        if k == 0 {
            return Err(ServiceError::BadRequest("k must be at least 1".into()));
        }
        self.touch(session_id)?;
        let feature = self.query_feature(payload).await?;
        self.ensure_fresh_index().await;
        let results = self.index.read().query(&feature, k as usize)?;
        let message = ResultMessage {
            session_id: session_id.to_string(),
            status: ResultStatus::Ok,
            results,
        };
        self.touch(session_id)?;
        self.record_result(session_id, Some(feature), message.clone());
        Ok(message)
    }

    /// `POST /sessions/{id}/query`; the session id is the capability.
    pub async fn handle_query_message(
        &self,
        session_id: &str,
        message: QueryMessage,
    ) -> Result<ResultMessage, ServiceError> {
        if message.session_id != session_id {
            return Err(ServiceError::BadRequest("session id in body and path differ".into()));
        }
        let session = self.touch(session_id)?;
        if session.mode != DeliveryMode::Messages {
            return Err(ServiceError::BadRequest("session is in messenger mode; send a messenger agent".into()));
        }
        self.handle_query(session_id, message.query, message.k).await
    }

    async fn handle_messenger(&self, envelope: AgentEnvelope) -> Result<AgentEnvelope, ServiceError> {
        self.keys.verify_kind(&envelope, AgentKind::Messenger, self.clock.now())?;
        let cargo = MessengerCargo::decode(&envelope.state)?;
        let session_id = match &cargo {
            MessengerCargo::Query(q) => q.session_id.clone(),
            MessengerCargo::Collect { session_id } => session_id.clone(),
            MessengerCargo::Result(_) => {
                return Err(ServiceError::BadRequest("the broker does not accept results".into()))
            }
        };
        let session = self.touch(&session_id)?;
        if session.owner != envelope.certificate.issuer {
            return Err(ServiceError::Trust(format!(
                "session belongs to {:?}, messenger was sent by {:?}",
                session.owner, envelope.certificate.issuer
            )));
        }
        if session.mode != DeliveryMode::Messenger {
            return Err(ServiceError::BadRequest("session is in messages mode".into()));
        }
        let result = match cargo {
            MessengerCargo::Query(q) => self.handle_query(&session_id, q.query, q.k).await?,
            _ => session.last_result.unwrap_or_else(|| ResultMessage::pending(&session_id)),
        };
        let signer = self.signer_for(&session.owner)?;
        Ok(make_return(&envelope, MessengerCargo::Result(result).encode(), &signer, self.clock.now()))
    }

    /// `GET /sessions/{id}/result`.
    pub fn poll_result(&self, session_id: &str) -> Result<ResultMessage, ServiceError> {
        let s = self.touch(session_id)?;
        Ok(s.last_result.unwrap_or_else(|| ResultMessage::pending(session_id)))
    }

    /// The session's last result in its delivery mode: a bare message, or a
    /// fresh messenger agent addressed to the client's reply address (or
    /// back over the client's own connection when it has none).
    pub fn transmission(&self, session_id: &str) -> Result<Delivery, ServiceError> {
        let s = self
            .session(session_id)
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
        let result = s.last_result.clone().unwrap_or_else(|| ResultMessage::pending(session_id));
        match s.mode {
            DeliveryMode::Messages => Ok(Delivery::Message(result)),
            DeliveryMode::Messenger => {
                let destination = s.reply_address.as_deref().unwrap_or(&self.settings.public_url);
                let signer = self.signer_for(&s.owner)?;
                let env = make_messenger(destination, &MessengerCargo::Result(result), &signer, self.clock.now())?;
                Ok(Delivery::Messenger(env))
            }
        }
    }

    /// Pushes the last result to the client's reply address. When the client
    /// has no address or cannot be reached, the result stays in the session.
    pub async fn deliver_result(&self, session_id: &str) -> Result<DeliveryStatus, ServiceError> {
        let delivery = self.transmission(session_id)?;
        let Some(address) = self.session(session_id).and_then(|s| s.reply_address) else {
            return Ok(DeliveryStatus::Retained);
        };
        match self.replies.push(&address, delivery.content_type(), delivery.encode()).await {
            Ok(()) => Ok(DeliveryStatus::Pushed),
            Err(e) => {
                tracing::warn!(session = session_id, %address, error = %e, "client unreachable; result retained");
                Ok(DeliveryStatus::Retained)
            }
        }
    }

    /// Removes sessions idle for longer than the configured timeout.
    pub fn expire_sessions(&self, now: Timestamp) -> usize {
        let timeout = self.settings.session_idle_timeout;
        let mut sessions = self.sessions.lock();
        let before = sessions.len();
        sessions.retain(|_, s| now.since(s.last_active_at) <= timeout);
        before - sessions.len()
    }

    fn stale_providers(&self) -> Vec<ProviderSpec> {
        let now = self.clock.now();
        let index = self.index.read();
        self.settings
            .providers
            .iter()
            .filter(|p| {
                index
                    .provider_staleness(&p.url, now)
                    .is_none_or(|age| age > self.settings.reindex_max_age)
            })
            .cloned()
            .collect()
    }

    /// Re-indexes every provider whose shard is missing or too old.
    pub async fn ensure_fresh_index(&self) -> Option<DispatchReport> {
        if self.stale_providers().is_empty() {
            return None;
        }
        let _gate = self.dispatch_gate.lock().await;
        let stale = self.stale_providers();
        if stale.is_empty() {
            return None;
        }
        Some(self.dispatch_unlocked(&stale).await)
    }

    /// `POST /admin/reindex`: re-indexes every configured provider.
    pub async fn reindex_all(&self) -> DispatchReport {
        let _gate = self.dispatch_gate.lock().await;
        let providers = self.settings.providers.clone();
        self.dispatch_unlocked(&providers).await
    }

    pub async fn dispatch_index_agents(&self, providers: &[ProviderSpec]) -> DispatchReport {
        let _gate = self.dispatch_gate.lock().await;
        self.dispatch_unlocked(providers).await
    }

    async fn dispatch_unlocked(&self, providers: &[ProviderSpec]) -> DispatchReport {
        let mut report = DispatchReport::default();
        let mut targets = Vec::new();
        let mut specs = HashMap::new();
        for p in providers {
            match self.signer_for(&p.principal) {
                Ok(signer) => {
                    targets.push(IndexTarget {
                        provider_url: p.url.clone(),
                        signer,
                    });
                    specs.insert(p.url.clone(), p.clone());
                }
                Err(e) => report.failed.push(ProviderFailure {
                    provider_url: p.url.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        if !targets.is_empty() {
            match make_index(&targets, &self.settings.public_url, &self.settings.bank, self.clock.now()) {
                Ok(envelopes) => {
                    report.dispatched = envelopes.len();
                    self.counters.index_agents.fetch_add(envelopes.len(), Ordering::Relaxed);
                    let trips = envelopes.into_iter().map(|sent| async move {
                        let url = sent.itinerary[0].clone();
                        let reply = self.transport.send_agent(&url, sent.clone()).await;
                        (url, sent, reply)
                    });
                    for (url, sent, reply) in futures::future::join_all(trips).await {
                        let spec = &specs[&url];
                        let merged = reply
                            .and_then(|r| self.accept_shard(spec, &sent, &r))
                            .and_then(|shard| self.merge(shard));
                        match merged {
                            Ok(m) => report.merged.push(m),
                            Err(e) => {
                                tracing::warn!(provider = %url, error = %e, "index agent failed; provider skipped");
                                report.failed.push(ProviderFailure {
                                    provider_url: url,
                                    reason: e.to_string(),
                                });
                            }
                        }
                    }
                }
                Err(e) => report.failed.extend(targets.iter().map(|t| ProviderFailure {
                    provider_url: t.provider_url.clone(),
                    reason: e.to_string(),
                })),
            }
        }
        report.index_entries = self.index_len();
        if let Some(path) = &self.settings.snapshot_path {
            if !report.merged.is_empty() {
                if let Err(e) = self.index.read().save(path) {
                    tracing::error!(path = %path.display(), error = %e, "saving index snapshot failed");
                }
            }
        }
        report
    }

    /// Checks that a returning agent is the one sent, signed by the provider it visited.
    fn check_return(
        &self,
        spec: &ProviderSpec,
        sent: &AgentEnvelope,
        reply: &AgentEnvelope,
        kind: AgentKind,
    ) -> Result<(), ServiceError> {
        self.keys.verify_kind(reply, kind, self.clock.now())?;
        if reply.certificate.issuer != spec.principal {
            return Err(ServiceError::Trust(format!(
                "agent returned signed by {:?}, expected {:?}",
                reply.certificate.issuer, spec.principal
            )));
        }
        if reply.agent_id != sent.agent_id {
            return Err(ServiceError::Trust("returning agent id does not match the dispatched agent".into()));
        }
        Ok(())
    }

    fn accept_shard(
        &self,
        spec: &ProviderSpec,
        sent: &AgentEnvelope,
        reply: &AgentEnvelope,
    ) -> Result<IndexShard, ServiceError> {
        self.check_return(spec, sent, reply, AgentKind::Index)?;
        match IndexState::decode(&reply.state)? {
            IndexState::Shard(shard) if shard.provider_url == spec.url => Ok(shard),
            IndexState::Shard(shard) => Err(ServiceError::BadRequest(format!(
                "shard claims provider {}, agent visited {}",
                shard.provider_url, spec.url
            ))),
            IndexState::Task(_) => Err(ServiceError::BadRequest("index agent returned without a shard".into())),
        }
    }

    fn merge(&self, shard: IndexShard) -> Result<MergedShard, ServiceError> {
        let (provider_url, entries, skipped) = (shard.provider_url.clone(), shard.entries.len(), shard.skipped.len());
        let outcome = self.index.write().merge_shard(shard, self.clock.now())?;
        Ok(MergedShard {
            provider_url,
            entries,
            skipped,
            outcome: match outcome {
                MergeOutcome::Applied { .. } => "applied".into(),
                MergeOutcome::Stale => "stale".into(),
            },
        })
    }

    /// Sends one search agent per provider holding requested images and
    /// returns one item per request, in request order.
    pub async fn retrieve(
        &self,
        session_id: &str,
        requests: &[RetrieveRequest],
    ) -> Result<Vec<RetrievalItem>, ServiceError> {
        self.touch(session_id)?;
        self.ensure_fresh_index().await;
        let mut outcomes: Vec<Option<SearchOutcome>> = vec![None; requests.len()];
        // provider url -> request indices, in request order
        let mut groups: Vec<(ProviderSpec, Vec<usize>)> = Vec::new();
        {
            let index = self.index.read();
            for (i, r) in requests.iter().enumerate() {
                let spec = self.settings.providers.iter().find(|p| p.url == r.provider_url);
                match spec {
                    Some(spec) if index.get(&r.provider_url, &r.image_id).is_some() => {
                        match groups.iter_mut().find(|(g, _)| g.url == spec.url) {
                            Some((_, ids)) => ids.push(i),
                            None => groups.push((spec.clone(), vec![i])),
                        }
                    }
                    _ => outcomes[i] = Some(SearchOutcome::NotFound),
                }
            }
        }

        let mut targets = Vec::new();
        let mut sendable = Vec::new();
        for (spec, ids) in groups {
            match self.signer_for(&spec.principal) {
                Ok(signer) => {
                    targets.push(SearchTarget {
                        provider_url: spec.url.clone(),
                        signer,
                        items: ids
                            .iter()
                            .map(|&i| SearchItem {
                                image_id: requests[i].image_id.clone(),
                                token: requests[i].token.clone(),
                                purchaser_id: requests[i].purchaser_id.clone(),
                            })
                            .collect(),
                    });
                    sendable.push((spec, ids));
                }
                Err(e) => {
                    for i in ids {
                        outcomes[i] = Some(SearchOutcome::Failed { reason: e.to_string() });
                    }
                }
            }
        }

        if !targets.is_empty() {
            let envelopes = make_search(&targets, &self.settings.public_url, session_id, self.clock.now())?;
            self.counters.search_agents.fetch_add(envelopes.len(), Ordering::Relaxed);
            let trips = envelopes.into_iter().zip(sendable).map(|(sent, (spec, ids))| async move {
                let reply = self.transport.send_agent(&spec.url, sent.clone()).await;
                (spec, ids, sent, reply)
            });
            for (spec, ids, sent, reply) in futures::future::join_all(trips).await {
                let results = reply.and_then(|r| {
                    self.check_return(&spec, &sent, &r, AgentKind::Search)?;
                    match SearchState::decode(&r.state)? {
                        SearchState::Results(items) if items.len() == ids.len() => Ok(items),
                        _ => Err(ServiceError::BadRequest("search agent returned a malformed result".into())),
                    }
                });
                match results {
                    Ok(items) => {
                        for (i, item) in ids.into_iter().zip(items) {
                            outcomes[i] = Some(if item.image_id == requests[i].image_id {
                                item.outcome
                            } else {
                                SearchOutcome::Failed {
                                    reason: "provider answered for a different image".into(),
                                }
                            });
                        }
                    }
                    Err(e) => {
                        tracing::warn!(provider = %spec.url, error = %e, "search agent failed");
                        for i in ids {
                            outcomes[i] = Some(SearchOutcome::Failed { reason: e.to_string() });
                        }
                    }
                }
            }
        }

        Ok(requests
            .iter()
            .zip(outcomes)
            .map(|(r, o)| RetrievalItem {
                provider_url: r.provider_url.clone(),
                image_id: r.image_id.clone(),
                outcome: o.expect("every request resolved"),
            })
            .collect())
    }
}
