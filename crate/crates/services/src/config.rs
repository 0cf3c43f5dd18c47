//! TOML configuration for `serve-broker` and `serve-provider`.
//!
//! Secrets are never inline: each peer names a key file, resolved relative
//! to the configuration file's directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use cbir_core::gabor::FilterBankParams;
use cbir_core::protocol::{KeyRing, Secret};
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, LicenseStore};
use crate::broker::{BrokerSettings, ProviderSpec};
use crate::clock::Clock;
use crate::provider::ProviderNode;
use crate::ServiceError;

fn config_error(path: &Path, detail: impl std::fmt::Display) -> ServiceError {
    ServiceError::BadRequest(format!("config {}: {detail}", path.display()))
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(path, e))?;
    toml::from_str(&text).map_err(|e| config_error(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_secret(base: &Path, file: &Path) -> Result<Secret, ServiceError> {
    let path = base.join(file);
    Secret::from_file(&path).map_err(|e| config_error(&path, e))
}

/// A peer and the file holding the secret shared with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerConfig {
    pub principal: String,
    pub secret_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderPeerConfig {
    pub url: String,
    pub principal: String,
    pub secret_file: PathBuf,
}

fn default_principal_broker() -> String {
    "broker".into()
}

fn default_reindex() -> u64 {
    600
}

fn default_idle() -> u64 {
    1800
}

fn default_k() -> u32 {
    10
}

fn default_validity() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerConfig {
    pub listen: SocketAddr,
    pub public_url: String,
    #[serde(default = "default_principal_broker")]
    pub principal: String,
    #[serde(default = "default_reindex")]
    pub reindex_max_age_secs: u64,
    #[serde(default = "default_idle")]
    pub session_idle_timeout_secs: u64,
    #[serde(default = "default_k")]
    pub default_k: u32,
    #[serde(default = "default_validity")]
    pub certificate_validity_secs: u64,
    #[serde(default)]
    pub snapshot: Option<PathBuf>,
    #[serde(default)]
    pub bank: Option<FilterBankParams>,
    pub providers: Vec<ProviderPeerConfig>,
    #[serde(default)]
    pub clients: Vec<PeerConfig>,
}

/// A broker configuration with its secrets loaded.
#[derive(Debug, Clone)]
pub struct LoadedBroker {
    pub listen: SocketAddr,
    pub settings: BrokerSettings,
    pub keys: KeyRing,
}

impl BrokerConfig {
    pub fn load(path: &Path) -> Result<LoadedBroker, ServiceError> {
        read_toml::<Self>(path)?.resolve(&base_dir(path))
    }

    pub fn resolve(self, base: &Path) -> Result<LoadedBroker, ServiceError> {
        let mut keys = KeyRing::new(self.principal);
        for p in &self.providers {
            keys.add_peer(p.principal.clone(), load_secret(base, &p.secret_file)?);
        }
        for c in &self.clients {
            keys.add_peer(c.principal.clone(), load_secret(base, &c.secret_file)?);
        }
        let mut settings = BrokerSettings::new(
            self.public_url,
            self.providers
                .into_iter()
                .map(|p| ProviderSpec {
                    url: p.url,
                    principal: p.principal,
                })
                .collect(),
        );
        settings.reindex_max_age = Duration::from_secs(self.reindex_max_age_secs);
        settings.session_idle_timeout = Duration::from_secs(self.session_idle_timeout_secs);
        settings.default_k = self.default_k;
        settings.certificate_validity = Duration::from_secs(self.certificate_validity_secs);
        settings.snapshot_path = self.snapshot.map(|s| base.join(s));
        if let Some(bank) = self.bank {
            settings.bank = bank;
        }
        settings.validate()?;
        Ok(LoadedBroker {
            listen: self.listen,
            settings,
            keys,
        })
    }
}

fn default_licenses() -> PathBuf {
    "licenses.json".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub listen: SocketAddr,
    pub public_url: String,
    pub principal: String,
    /// Directory holding `manifest.json` and the image files.
    pub archive: PathBuf,
    #[serde(default = "default_licenses")]
    pub licenses: PathBuf,
    #[serde(default = "default_validity")]
    pub certificate_validity_secs: u64,
    pub brokers: Vec<PeerConfig>,
}

#[derive(Debug)]
pub struct LoadedProvider {
    pub listen: SocketAddr,
    pub public_url: String,
    pub keys: KeyRing,
    pub archive: Archive,
    pub licenses: LicenseStore,
    pub validity: Duration,
}

impl LoadedProvider {
    pub fn into_node(self, clock: Arc<dyn Clock>) -> ProviderNode {
        ProviderNode::new(self.public_url, self.keys, self.archive, self.licenses, clock, self.validity)
    }
}

impl ProviderConfig {
    pub fn load(path: &Path) -> Result<LoadedProvider, ServiceError> {
        read_toml::<Self>(path)?.resolve(&base_dir(path))
    }

    pub fn resolve(self, base: &Path) -> Result<LoadedProvider, ServiceError> {
        if self.brokers.is_empty() {
            return Err(ServiceError::BadRequest("provider config: at least one broker is required".into()));
        }
        let mut keys = KeyRing::new(self.principal);
        for b in &self.brokers {
            keys.add_peer(b.principal.clone(), load_secret(base, &b.secret_file)?);
        }
        Ok(LoadedProvider {
            listen: self.listen,
            public_url: self.public_url,
            keys,
            archive: Archive::open(&base.join(&self.archive))?,
            licenses: LicenseStore::load(&base.join(&self.licenses))?,
            validity: Duration::from_secs(self.certificate_validity_secs),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broker_config_resolves_secrets_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("keys")).unwrap();
        std::fs::write(dir.path().join("keys/p1.key"), "s1\n").unwrap();
        std::fs::write(dir.path().join("keys/alice.key"), "s2").unwrap();
        let path = dir.path().join("broker.toml");
        std::fs::write(
            &path,
            r#"
listen = "127.0.0.1:7070"
public_url = "http://127.0.0.1:7070"
reindex_max_age_secs = 60
snapshot = "index.cbix"

[[providers]]
url = "http://127.0.0.1:7071"
principal = "provider-1"
secret_file = "keys/p1.key"

[[clients]]
principal = "alice"
secret_file = "keys/alice.key"
"#,
        )
        .unwrap();
        let loaded = BrokerConfig::load(&path).unwrap();
        assert_eq!(loaded.keys.principal(), "broker");
        assert!(loaded.keys.trusts("provider-1") && loaded.keys.trusts("alice"));
        assert_eq!(loaded.settings.reindex_max_age, Duration::from_secs(60));
        assert_eq!(loaded.settings.default_k, 10);
        assert_eq!(loaded.settings.snapshot_path, Some(dir.path().join("index.cbix")));
        assert_eq!(loaded.settings.providers[0].principal, "provider-1");
    }

    #[test]
    fn missing_secret_and_unknown_keys_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broker.toml");
        std::fs::write(
            &path,
            "listen = \"127.0.0.1:1\"\npublic_url = \"http://x\"\n[[providers]]\nurl = \"http://p\"\nprincipal = \"p\"\nsecret_file = \"nope.key\"\n",
        )
        .unwrap();
        assert!(matches!(BrokerConfig::load(&path), Err(ServiceError::BadRequest(_))));
        std::fs::write(&path, "listen = \"127.0.0.1:1\"\npublic_url = \"http://x\"\nsecret = \"inline\"\nproviders = []\n")
            .unwrap();
        assert!(BrokerConfig::load(&path).is_err());
    }
}
