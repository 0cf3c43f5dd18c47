use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;
use thiserror::Error;

use super::{AgentEnvelope, AgentKind, Certificate, PROTOCOL_VERSION};
use crate::wire::Writer;
use crate::Timestamp;

type HmacSha256 = Hmac<Sha256>;

const MAC_DOMAIN: &[u8] = b"cbir-agent-envelope-v1";

/// Symmetric key shared by one (issuer, verifier) pair.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(Vec<u8>);

impl Secret {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    /// Reads a key file; surrounding whitespace is not part of the key.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read(path)?;
        let trimmed = raw.trim_ascii();
        if trimmed.is_empty() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("secret file {} is empty", path.display()),
            ));
        }
        Ok(Self(trimmed.to_vec()))
    }

    fn mac(&self) -> HmacSha256 {
        <HmacSha256 as KeyInit>::new_from_slice(&self.0).expect("HMAC accepts any key length")
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Secret(<{} bytes>)", self.0.len())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("issuer {0:?} is not trusted")]
    UnknownIssuer(String),
    #[error("certificate MAC does not verify")]
    BadMac,
    #[error("certificate expired at {not_after} (now {now})")]
    Expired { not_after: u64, now: u64 },
    #[error("unsupported protocol version {0}")]
    Version(u16),
    #[error("envelope itinerary is empty")]
    EmptyItinerary,
    #[error("expected a {expected} agent, got {actual}")]
    WrongKind { expected: AgentKind, actual: AgentKind },
}

fn authenticate(envelope: &AgentEnvelope, cert: &Certificate, secret: &Secret) -> HmacSha256 {
    let mut w = Writer::new();
    w.raw(MAC_DOMAIN);
    let mut unsigned = envelope.clone();
    unsigned.certificate = Certificate {
        mac: Vec::new(),
        ..cert.clone()
    };
    unsigned.write_signed_fields(&mut w);
    let mut mac = secret.mac();
    mac.update(&w.finish());
    mac
}

/// Certificate for `envelope` (its current certificate is ignored). The MAC
/// covers every envelope field plus issuer, subject and expiry.
pub fn sign(
    envelope: &AgentEnvelope,
    issuer: &str,
    subject: &str,
    not_after: Timestamp,
    secret: &Secret,
) -> Certificate {
    let mut cert = Certificate {
        issuer: issuer.to_string(),
        subject: subject.to_string(),
        not_after,
        mac: Vec::new(),
    };
    cert.mac = authenticate(envelope, &cert, secret).finalize().into_bytes().to_vec();
    cert
}

/// Accepts the envelope only if its issuer is trusted, the MAC verifies
/// under the shared secret, and the certificate has not expired.
pub fn verify(envelope: &AgentEnvelope, trust: &KeyRing, now: Timestamp) -> Result<(), VerifyError> {
    if envelope.version != PROTOCOL_VERSION {
        return Err(VerifyError::Version(envelope.version));
    }
    if envelope.itinerary.is_empty() {
        return Err(VerifyError::EmptyItinerary);
    }
    let cert = &envelope.certificate;
    let secret = trust
        .secret_for(&cert.issuer)
        .ok_or_else(|| VerifyError::UnknownIssuer(cert.issuer.clone()))?;
    authenticate(envelope, cert, secret)
        .verify_slice(&cert.mac)
        .map_err(|_| VerifyError::BadMac)?;
    if now >= cert.not_after {
        return Err(VerifyError::Expired {
            not_after: cert.not_after.0,
            now: now.0,
        });
    }
    Ok(())
}

/// A host's identity plus the secrets it shares with each peer.
///
/// The same table serves signing (secret shared with the destination) and
/// verification (secret shared with the issuer).
#[derive(Debug, Clone, Default)]
pub struct KeyRing {
    principal: String,
    peers: BTreeMap<String, Secret>,
}

impl KeyRing {
    pub fn new(principal: impl Into<String>) -> Self {
        Self {
            principal: principal.into(),
            peers: BTreeMap::new(),
        }
    }

    pub fn with_peer(mut self, peer: impl Into<String>, secret: Secret) -> Self {
        self.add_peer(peer, secret);
        self
    }

    pub fn add_peer(&mut self, peer: impl Into<String>, secret: Secret) {
        self.peers.insert(peer.into(), secret);
    }

    pub fn principal(&self) -> &str {
        &self.principal
    }

    pub fn secret_for(&self, peer: &str) -> Option<&Secret> {
        self.peers.get(peer)
    }

    pub fn trusts(&self, peer: &str) -> bool {
        self.peers.contains_key(peer)
    }

    /// Signer for envelopes addressed to `peer`, acting for `subject`.
    pub fn signer_for(&self, peer: &str, subject: &str, validity: Duration) -> Option<Signer> {
        self.secret_for(peer).map(|secret| Signer {
            issuer: self.principal.clone(),
            subject: subject.to_string(),
            secret: secret.clone(),
            validity,
        })
    }

    pub fn verify(&self, envelope: &AgentEnvelope, now: Timestamp) -> Result<(), VerifyError> {
        verify(envelope, self, now)
    }

    /// [`verify`] plus a kind check.
    pub fn verify_kind(&self, envelope: &AgentEnvelope, kind: AgentKind, now: Timestamp) -> Result<(), VerifyError> {
        self.verify(envelope, now)?;
        if envelope.kind != kind {
            return Err(VerifyError::WrongKind {
                expected: kind,
                actual: envelope.kind,
            });
        }
        Ok(())
    }
}

/// Certificate material for one outgoing envelope.
#[derive(Debug, Clone)]
pub struct Signer {
    pub issuer: String,
    pub subject: String,
    pub secret: Secret,
    pub validity: Duration,
}

impl Signer {
    /// Signs in place, valid from `now` for the signer's validity window.
    pub fn seal(&self, mut envelope: AgentEnvelope, now: Timestamp) -> AgentEnvelope {
        let not_after = now.saturating_add(self.validity);
        envelope.certificate = sign(&envelope, &self.issuer, &self.subject, not_after, &self.secret);
        envelope
    }
}
