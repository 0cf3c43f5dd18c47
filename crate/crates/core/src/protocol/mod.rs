//! Signed agent envelopes and the messages exchanged between client,
//! broker and providers.
//!
//! Agents do not carry code. An envelope names a task kind plus
//! kind-specific state, and each host dispatches on the kind. The canonical
//! encoding is the only byte representation of an envelope, so the
//! certificate MAC is computed over exactly what travels.

mod agents;
mod messages;
mod trust;

use std::fmt;

use thiserror::Error;

use crate::wire::{Reader, WireError, Writer};
use crate::Timestamp;

pub use agents::{make_index, make_messenger, make_parked, make_return, make_search, IndexTarget, SearchTarget};
pub use messages::{
    DeliveryMode, IndexState, IndexTask, MessengerCargo, ParkedState, QueryMessage, QueryPayload,
    ResultMessage, ResultStatus, SearchItem, SearchItemResult, SearchOutcome, SearchState, SearchTask,
    SessionAck,
};
pub use trust::{sign, verify, KeyRing, Secret, Signer, VerifyError};

pub const PROTOCOL_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("unknown protocol version {0}")]
    UnknownVersion(u16),
    #[error("unknown agent kind {0}")]
    UnknownKind(u8),
    #[error("malformed envelope: {0}")]
    Malformed(#[from] WireError),
    #[error("envelope itinerary is empty")]
    EmptyItinerary,
    #[error("malformed URL {url:?}: {reason}")]
    InvalidUrl { url: String, reason: String },
    #[error("an index agent needs at least one provider")]
    NoProviders,
    #[error("expected a {expected} agent, got {actual}")]
    WrongKind { expected: AgentKind, actual: AgentKind },
    #[error("invalid state payload: {0}")]
    InvalidState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Parked,
    Messenger,
    Index,
    Search,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [Self::Parked, Self::Messenger, Self::Index, Self::Search];

    pub fn code(self) -> u8 {
        match self {
            Self::Parked => 0,
            Self::Messenger => 1,
            Self::Index => 2,
            Self::Search => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, ProtocolError> {
        Self::ALL
            .into_iter()
            .find(|k| k.code() == code)
            .ok_or(ProtocolError::UnknownKind(code))
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Parked => "parked",
            Self::Messenger => "messenger",
            Self::Index => "index",
            Self::Search => "search",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub issuer: String,
    pub subject: String,
    pub not_after: Timestamp,
    pub mac: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentEnvelope {
    pub version: u16,
    pub kind: AgentKind,
    pub agent_id: String,
    pub itinerary: Vec<String>,
    pub state: Vec<u8>,
    pub certificate: Certificate,
}

impl AgentEnvelope {
    /// Everything except the MAC, in wire order. This is what gets authenticated.
    pub(crate) fn write_signed_fields(&self, w: &mut Writer) {
        w.u16(self.version).u8(self.kind.code()).str(&self.agent_id);
        w.u32(self.itinerary.len() as u32);
        for hop in &self.itinerary {
            w.str(hop);
        }
        w.bytes(&self.state);
        let c = &self.certificate;
        w.str(&c.issuer).str(&c.subject).u64(c.not_after.0);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_signed_fields(&mut w);
        w.bytes(&self.certificate.mac);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let version = r.u16()?;
        if version != PROTOCOL_VERSION {
            return Err(ProtocolError::UnknownVersion(version));
        }
        let kind = AgentKind::from_code(r.u8()?)?;
        let agent_id = r.string()?;
        let hops = r.count(4)?;
        let itinerary = (0..hops).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        if itinerary.is_empty() {
            return Err(ProtocolError::EmptyItinerary);
        }
        let state = r.bytes()?.to_vec();
        let certificate = Certificate {
            issuer: r.string()?,
            subject: r.string()?,
            not_after: Timestamp(r.u64()?),
            mac: r.bytes()?.to_vec(),
        };
        r.finish()?;
        Ok(Self {
            version,
            kind,
            agent_id,
            itinerary,
            state,
            certificate,
        })
    }

    pub fn expect_kind(&self, expected: AgentKind) -> Result<(), ProtocolError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(ProtocolError::WrongKind {
                expected,
                actual: self.kind,
            })
        }
    }

    /// Final hop of the itinerary.
    pub fn destination(&self) -> &str {
        self.itinerary.last().map(String::as_str).unwrap_or_default()
    }
}

/// Diagnostic rendering, one field per line. Never authenticated.
impl fmt::Display for AgentEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex = |b: &[u8]| b.iter().map(|x| format!("{x:02x}")).collect::<String>();
        writeln!(f, "version: {}", self.version)?;
        writeln!(f, "kind: {}", self.kind)?;
        writeln!(f, "agent_id: {}", self.agent_id)?;
        writeln!(f, "itinerary: {}", self.itinerary.join(" -> "))?;
        writeln!(f, "state: {} bytes", self.state.len())?;
        writeln!(f, "issuer: {}", self.certificate.issuer)?;
        writeln!(f, "subject: {}", self.certificate.subject)?;
        writeln!(f, "not_after: {}", self.certificate.not_after.0)?;
        write!(f, "mac: {}", hex(&self.certificate.mac))
    }
}

pub(crate) fn check_url(url: &str) -> Result<(), ProtocolError> {
    let invalid = |reason: String| ProtocolError::InvalidUrl {
        url: url.to_string(),
        reason,
    };
    let parsed = url::Url::parse(url).map_err(|e| invalid(e.to_string()))?;
    if !matches!(parsed.scheme(), "http" | "https") || parsed.host().is_none() {
        return Err(invalid("expected an http(s) URL with a host".into()));
    }
    Ok(())
}
