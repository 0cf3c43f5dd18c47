//! Kind-specific agent state and the two plain messages that can replace
//! the messenger agent.

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::gabor::{FilterBankParams, TextureFeatureVector};
use crate::imaging::ImageFormat;
use crate::index::{ImageDescriptor, IndexShard};
use crate::wire::{Reader, WireError, Writer};

fn finish<T>(r: Reader<'_>, value: T) -> Result<T, ProtocolError> {
    r.finish()?;
    Ok(value)
}

fn bad_tag(what: &str, tag: u8) -> ProtocolError {
    ProtocolError::InvalidState(format!("unknown {what} tag {tag}"))
}

/// How the broker returns results to a parked session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeliveryMode {
    /// Results ride back inside a messenger agent envelope.
    Messenger,
    /// Results travel as a bare [`ResultMessage`].
    Messages,
}

impl DeliveryMode {
    fn code(self) -> u8 {
        match self {
            Self::Messenger => 0,
            Self::Messages => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self, ProtocolError> {
        match c {
            0 => Ok(Self::Messenger),
            1 => Ok(Self::Messages),
            t => Err(bad_tag("delivery mode", t)),
        }
    }
}

impl std::str::FromStr for DeliveryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "messenger" => Ok(Self::Messenger),
            "messages" => Ok(Self::Messages),
            other => Err(format!("unknown mode {other:?} (expected messenger or messages)")),
        }
    }
}

/// A query given either as a ready feature vector or as encoded image bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryPayload {
    Feature(TextureFeatureVector),
    Image(#[serde(with = "crate::b64")] Vec<u8>),
}

impl QueryPayload {
    fn write(&self, w: &mut Writer) {
        match self {
            Self::Feature(f) => w.u8(0).bytes(&f.to_bytes()),
            Self::Image(b) => w.u8(1).bytes(b),
        };
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, ProtocolError> {
        match r.u8()? {
            0 => TextureFeatureVector::from_bytes(r.bytes()?)
                .map(Self::Feature)
                .map_err(|e| ProtocolError::InvalidState(e.to_string())),
            1 => Ok(Self::Image(r.bytes()?.to_vec())),
            t => Err(bad_tag("query payload", t)),
        }
    }
}

/// Client to parked agent: run this query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMessage {
    pub session_id: String,
    pub query: QueryPayload,
    pub k: u32,
}

impl QueryMessage {
    fn write(&self, w: &mut Writer) {
        w.str(&self.session_id);
        self.query.write(w);
        w.u32(self.k);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, ProtocolError> {
        Ok(Self {
            session_id: r.string()?,
            query: QueryPayload::read(r)?,
            k: r.u32()?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let m = Self::read(&mut r)?;
        finish(r, m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state", content = "detail")]
pub enum ResultStatus {
    Ok,
    /// No query has completed for this session yet.
    Pending,
    Error(String),
}

/// Parked agent to client: the ranked results of the last query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMessage {
    pub session_id: String,
    pub status: ResultStatus,
    pub results: Vec<ImageDescriptor>,
}

fn write_descriptor(w: &mut Writer, d: &ImageDescriptor) {
    w.str(&d.provider_url).str(&d.image_id).bytes(&d.thumbnail);
    match d.similarity {
        Some(s) => w.u8(1).f64(s),
        None => w.u8(0),
    };
}

fn read_descriptor(r: &mut Reader<'_>) -> Result<ImageDescriptor, WireError> {
    Ok(ImageDescriptor {
        provider_url: r.string()?,
        image_id: r.string()?,
        thumbnail: r.bytes()?.to_vec(),
        similarity: if r.bool()? { Some(r.f64()?) } else { None },
    })
}

impl ResultMessage {
    pub fn pending(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            status: ResultStatus::Pending,
            results: Vec::new(),
        }
    }

    fn write(&self, w: &mut Writer) {
        w.str(&self.session_id);
        match &self.status {
            ResultStatus::Ok => w.u8(0),
            ResultStatus::Pending => w.u8(1),
            ResultStatus::Error(m) => w.u8(2).str(m),
        };
        w.u32(self.results.len() as u32);
        for d in &self.results {
            write_descriptor(w, d);
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, ProtocolError> {
        let session_id = r.string()?;
        let status = match r.u8()? {
            0 => ResultStatus::Ok,
            1 => ResultStatus::Pending,
            2 => ResultStatus::Error(r.string()?),
            t => return Err(bad_tag("result status", t)),
        };
        let n = r.count(13)?;
        let results = (0..n).map(|_| read_descriptor(r)).collect::<Result<_, _>>()?;
        Ok(Self {
            session_id,
            status,
            results,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let m = Self::read(&mut r)?;
        finish(r, m)
    }
}

/// Broker reply to a hosted parked agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionAck {
    pub session_id: String,
    pub agent_id: String,
    pub mode: DeliveryMode,
}

impl SessionAck {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(&self.session_id).str(&self.agent_id).u8(self.mode.code());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let ack = Self {
            session_id: r.string()?,
            agent_id: r.string()?,
            mode: DeliveryMode::from_code(r.u8()?)?,
        };
        finish(r, ack)
    }
}

/// State of a parked agent: where it camps and what it should do first.
#[derive(Debug, Clone, PartialEq)]
pub struct ParkedState {
    pub broker_url: String,
    /// Where pushed results should go; `None` means the client polls.
    pub reply_address: Option<String>,
    pub mode: DeliveryMode,
    pub initial_query: Option<QueryPayload>,
    pub k: u32,
}

impl ParkedState {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(&self.broker_url)
            .opt_str(self.reply_address.as_deref())
            .u8(self.mode.code());
        match &self.initial_query {
            Some(q) => {
                w.u8(1);
                q.write(&mut w);
            }
            None => {
                w.u8(0);
            }
        }
        w.u32(self.k);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let broker_url = r.string()?;
        let reply_address = r.opt_string()?;
        let mode = DeliveryMode::from_code(r.u8()?)?;
        let initial_query = if r.bool()? { Some(QueryPayload::read(&mut r)?) } else { None };
        let s = Self {
            broker_url,
            reply_address,
            mode,
            initial_query,
            k: r.u32()?,
        };
        finish(r, s)
    }
}

/// The indexing task an index agent carries to a provider.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexTask {
    pub broker_url: String,
    pub bank: FilterBankParams,
}

/// An index agent either travels out with its task or returns with a shard.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexState {
    Task(IndexTask),
    Shard(IndexShard),
}

fn write_bank(w: &mut Writer, p: &FilterBankParams) {
    w.u32(p.scales as u32)
        .u32(p.orientations as u32)
        .f64(p.low_freq)
        .f64(p.high_freq)
        .u32(p.kernel_size as u32);
}

fn read_bank(r: &mut Reader<'_>) -> Result<FilterBankParams, WireError> {
    Ok(FilterBankParams {
        scales: r.u32()? as usize,
        orientations: r.u32()? as usize,
        low_freq: r.f64()?,
        high_freq: r.f64()?,
        kernel_size: r.u32()? as usize,
    })
}

impl IndexState {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Self::Task(t) => {
                w.u8(0).str(&t.broker_url);
                write_bank(&mut w, &t.bank);
            }
            Self::Shard(s) => {
                w.u8(1).raw(&s.encode());
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let s = match r.u8()? {
            0 => Self::Task(IndexTask {
                broker_url: r.string()?,
                bank: read_bank(&mut r)?,
            }),
            1 => Self::Shard(IndexShard::read(&mut r)?),
            t => return Err(bad_tag("index state", t)),
        };
        finish(r, s)
    }
}

/// One image a search agent should fetch, with the purchaser's licence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchItem {
    pub image_id: String,
    #[serde(default)]
    pub token: String,
    pub purchaser_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchTask {
    pub session_id: String,
    pub items: Vec<SearchItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum SearchOutcome {
    Image {
        format: ImageFormat,
        #[serde(with = "crate::b64")]
        bytes: Vec<u8>,
    },
    AccessDenied {
        reason: String,
    },
    NotFound,
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchItemResult {
    pub image_id: String,
    #[serde(flatten)]
    pub outcome: SearchOutcome,
}

/// A search agent travels out with requests and returns with per-item outcomes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchState {
    Task(SearchTask),
    Results(Vec<SearchItemResult>),
}

impl SearchState {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Self::Task(t) => {
                w.u8(0).str(&t.session_id).u32(t.items.len() as u32);
                for i in &t.items {
                    w.str(&i.image_id).str(&i.token).str(&i.purchaser_id);
                }
            }
            Self::Results(items) => {
                w.u8(1).u32(items.len() as u32);
                for i in items {
                    w.str(&i.image_id);
                    match &i.outcome {
                        SearchOutcome::Image { format, bytes } => {
                            w.u8(0).u8(matches!(format, ImageFormat::Png) as u8).bytes(bytes)
                        }
                        SearchOutcome::AccessDenied { reason } => w.u8(1).str(reason),
                        SearchOutcome::NotFound => w.u8(2),
                        SearchOutcome::Failed { reason } => w.u8(3).str(reason),
                    };
                }
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let s = match r.u8()? {
            0 => {
                let session_id = r.string()?;
                let n = r.count(12)?;
                let items = (0..n)
                    .map(|_| {
                        Ok(SearchItem {
                            image_id: r.string()?,
                            token: r.string()?,
                            purchaser_id: r.string()?,
                        })
                    })
                    .collect::<Result<_, WireError>>()?;
                Self::Task(SearchTask { session_id, items })
            }
            1 => {
                let n = r.count(5)?;
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    let image_id = r.string()?;
                    let outcome = match r.u8()? {
                        0 => {
                            let format = if r.bool()? { ImageFormat::Png } else { ImageFormat::Pgm };
                            SearchOutcome::Image {
                                format,
                                bytes: r.bytes()?.to_vec(),
                            }
                        }
                        1 => SearchOutcome::AccessDenied { reason: r.string()? },
                        2 => SearchOutcome::NotFound,
                        3 => SearchOutcome::Failed { reason: r.string()? },
                        t => return Err(bad_tag("search outcome", t)),
                    };
                    items.push(SearchItemResult { image_id, outcome });
                }
                Self::Results(items)
            }
            t => return Err(bad_tag("search state", t)),
        };
        finish(r, s)
    }
}

/// What a messenger agent is carrying.
#[derive(Debug, Clone, PartialEq)]
pub enum MessengerCargo {
    /// A new query for the parked agent.
    Query(QueryMessage),
    /// Fetch the result of the session's last query.
    Collect { session_id: String },
    /// The result, on the way back to the client.
    Result(ResultMessage),
}

impl MessengerCargo {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Self::Query(q) => {
                w.u8(0);
                q.write(&mut w);
            }
            Self::Collect { session_id } => {
                w.u8(1).str(session_id);
            }
            Self::Result(m) => {
                w.u8(2);
                m.write(&mut w);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let c = match r.u8()? {
            0 => Self::Query(QueryMessage::read(&mut r)?),
            1 => Self::Collect {
                session_id: r.string()?,
            },
            2 => Self::Result(ResultMessage::read(&mut r)?),
            t => return Err(bad_tag("messenger cargo", t)),
        };
        finish(r, c)
    }
}
