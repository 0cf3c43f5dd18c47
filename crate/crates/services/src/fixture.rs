//! A self-contained deployment for tests, benchmarks and demos: providers
//! with synthetic texture archives, license files and key files, and a
//! broker that knows them all.
//!
//! Every provider grants these licenses:
//!
//! | token | image | purchaser | uses |
//! |---|---|---|---|
//! | `alice-all` | every image | `alice` | 1000 |
//! | `bob-img00` | `img00` | `bob` | 1 |
//! | `carol-spent` | every image | `carol` | 0 |

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use cbir_core::gabor::FilterBankParams;
use cbir_core::imaging::{self, GrayImage, ImageFormat, Raster};
use cbir_core::protocol::{KeyRing, Secret, Signer};
use cbir_core::{synth, Timestamp};
use tokio::task::JoinHandle;

use crate::archive::{Archive, ArchiveEntry, LicenseRecord, LicenseStore, Manifest, ANY_IMAGE, MANIFEST_FILE};
use crate::broker::{Broker, BrokerSettings, ProviderSpec};
use crate::clock::{Clock, ManualClock, SystemClock};
use crate::http::{broker_router, provider_router};
use crate::provider::ProviderNode;
use crate::transport::{HttpTransport, InProcessTransport, NoReplySink, ProviderTransport, ReplySink};
use crate::ServiceError;

pub const BROKER_PRINCIPAL: &str = "broker";
pub const CLIENT_PRINCIPAL: &str = "alice";
pub const ALICE_TOKEN: &str = "alice-all";
pub const BOB_TOKEN: &str = "bob-img00";
pub const SPENT_TOKEN: &str = "carol-spent";

#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub providers: usize,
    pub images_per_provider: usize,
    pub side: usize,
    pub seed: u64,
    pub bank: FilterBankParams,
    pub reindex_max_age: Duration,
    pub session_idle_timeout: Duration,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            providers: 2,
            images_per_provider: 10,
            side: 64,
            seed: 7,
            bank: FilterBankParams::default(),
            reindex_max_age: Duration::from_secs(600),
            session_idle_timeout: Duration::from_secs(1800),
        }
    }
}

pub fn image_id(j: usize) -> String {
    format!("img{j:02}")
}

pub fn provider_principal(i: usize) -> String {
    format!("provider-{i}")
}

/// Licenses granted by every fixture provider.
pub fn standard_licenses() -> Vec<LicenseRecord> {
    let rec = |token: &str, image: &str, who: &str, uses| LicenseRecord {
        token: token.into(),
        image_id: image.into(),
        purchaser_id: who.into(),
        uses_remaining: uses,
    };
    vec![
        rec(ALICE_TOKEN, ANY_IMAGE, "alice", 1000),
        rec(BOB_TOKEN, "img00", "bob", 1),
        rec(SPENT_TOKEN, ANY_IMAGE, "carol", 0),
    ]
}

/// One provider's files on disk.
#[derive(Debug, Clone)]
pub struct ProviderFiles {
    pub principal: String,
    pub archive_dir: PathBuf,
    pub licenses: PathBuf,
    /// Key shared with the broker.
    pub secret_file: PathBuf,
    /// Image ids with their pixels; even ids are stored as PGM, odd as PNG.
    pub images: Vec<(String, GrayImage)>,
}

/// Archives, licenses and key files under a temporary directory.
pub struct FixtureFiles {
    pub root: tempfile::TempDir,
    pub providers: Vec<ProviderFiles>,
    /// Key shared between the client and the broker.
    pub client_secret_file: PathBuf,
    pub options: FixtureOptions,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> ServiceError + '_ {
    move |e| ServiceError::Internal(format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    std::fs::write(path, bytes).map_err(io(path))
}

impl FixtureFiles {
    pub fn create(options: FixtureOptions) -> Result<Self, ServiceError> {
        let root = tempfile::tempdir().map_err(|e| ServiceError::Internal(e.to_string()))?;
        let keys = root.path().join("keys");
        std::fs::create_dir(&keys).map_err(io(&keys))?;
        let client_secret_file = keys.join("alice.key");
        write(&client_secret_file, format!("alice-broker-{}", options.seed).as_bytes())?;

        let corpus = synth::texture_corpus(options.providers * options.images_per_provider, options.side, options.seed);
        let mut providers = Vec::new();
        for i in 0..options.providers {
            let principal = provider_principal(i);
            let archive_dir = root.path().join(&principal);
            std::fs::create_dir(&archive_dir).map_err(io(&archive_dir))?;
            let mut manifest = Manifest::default();
            let mut images = Vec::new();
            for j in 0..options.images_per_provider {
                let image = corpus[i * options.images_per_provider + j].clone();
                let id = image_id(j);
                let (name, bytes) = if j % 2 == 0 {
                    (format!("{id}.pgm"), imaging::encode_pgm(&image))
                } else {
                    let raster = Raster::new(image.width(), image.height(), 1, image.pixels().to_vec())?;
                    (format!("{id}.png"), imaging::encode(&raster, ImageFormat::Png)?)
                };
                write(&archive_dir.join(&name), &bytes)?;
                manifest.images.push(ArchiveEntry {
                    id: id.clone(),
                    path: name.into(),
                });
                images.push((id, image));
            }
            let manifest_json = serde_json::to_vec_pretty(&manifest).map_err(|e| ServiceError::Internal(e.to_string()))?;
            write(&archive_dir.join(MANIFEST_FILE), &manifest_json)?;
            let licenses = root.path().join(format!("{principal}-licenses.json"));
            let text = serde_json::json!({ "licenses": standard_licenses() }).to_string();
            write(&licenses, text.as_bytes())?;
            let secret_file = keys.join(format!("{principal}.key"));
            write(&secret_file, format!("broker-{principal}-{}", options.seed).as_bytes())?;
            providers.push(ProviderFiles {
                principal,
                archive_dir,
                licenses,
                secret_file,
                images,
            });
        }
        Ok(Self {
            root,
            providers,
            client_secret_file,
            options,
        })
    }

    fn secret(path: &Path) -> Result<Secret, ServiceError> {
        Secret::from_file(path).map_err(io(path))
    }

    pub fn client_keys(&self) -> Result<KeyRing, ServiceError> {
        Ok(KeyRing::new(CLIENT_PRINCIPAL).with_peer(BROKER_PRINCIPAL, Self::secret(&self.client_secret_file)?))
    }

    pub fn broker_keys(&self) -> Result<KeyRing, ServiceError> {
        let mut keys = KeyRing::new(BROKER_PRINCIPAL).with_peer(CLIENT_PRINCIPAL, Self::secret(&self.client_secret_file)?);
        for p in &self.providers {
            keys.add_peer(p.principal.clone(), Self::secret(&p.secret_file)?);
        }
        Ok(keys)
    }

    pub fn provider_node(&self, i: usize, url: &str, clock: Arc<dyn Clock>) -> Result<ProviderNode, ServiceError> {
        let p = &self.providers[i];
        let keys = KeyRing::new(p.principal.clone()).with_peer(BROKER_PRINCIPAL, Self::secret(&p.secret_file)?);
        Ok(ProviderNode::new(
            url,
            keys,
            Archive::open(&p.archive_dir)?,
            LicenseStore::load(&p.licenses)?,
            clock,
            Duration::from_secs(300),
        ))
    }

    pub fn broker_settings(&self, broker_url: &str, provider_urls: &[String]) -> BrokerSettings {
        let specs = self
            .providers
            .iter()
            .zip(provider_urls)
            .map(|(p, url)| ProviderSpec {
                url: url.clone(),
                principal: p.principal.clone(),
            })
            .collect();
        let mut settings = BrokerSettings::new(broker_url, specs);
        settings.bank = self.options.bank;
        settings.reindex_max_age = self.options.reindex_max_age;
        settings.session_idle_timeout = self.options.session_idle_timeout;
        settings
    }

    /// Raw archive bytes of provider `i`, image `j`.
    pub fn image_bytes(&self, i: usize, j: usize) -> Vec<u8> {
        let ext = if j.is_multiple_of(2) { "pgm" } else { "png" };
        let path = self.providers[i].archive_dir.join(format!("{}.{ext}", image_id(j)));
        std::fs::read(&path).expect("fixture image exists")
    }
}

pub const IN_PROCESS_BROKER: &str = "http://broker.test";

pub fn in_process_provider_url(i: usize) -> String {
    format!("http://provider-{i}.test")
}

/// Everything in one process, on a manual clock.
pub struct Fixture {
    pub files: FixtureFiles,
    pub broker: Arc<Broker>,
    pub nodes: Vec<Arc<ProviderNode>>,
    pub transport: InProcessTransport,
    pub clock: Arc<ManualClock>,
}

impl Fixture {
    pub fn new(options: FixtureOptions) -> Result<Self, ServiceError> {
        Self::with_replies(options, Arc::new(NoReplySink))
    }

    pub fn with_replies(options: FixtureOptions, replies: Arc<dyn ReplySink>) -> Result<Self, ServiceError> {
        let files = FixtureFiles::create(options)?;
        let clock = Arc::new(ManualClock::new(Timestamp(1_700_000_000_000)));
        let transport = InProcessTransport::new();
        let urls: Vec<String> = (0..files.providers.len()).map(in_process_provider_url).collect();
        let mut nodes = Vec::new();
        for (i, url) in urls.iter().enumerate() {
            let node = Arc::new(files.provider_node(i, url, clock.clone())?);
            transport.register(node.clone());
            nodes.push(node);
        }
        let broker = Broker::new(
            files.broker_settings(IN_PROCESS_BROKER, &urls),
            files.broker_keys()?,
            Arc::new(transport.clone()),
            replies,
            clock.clone(),
        )?;
        Ok(Self {
            files,
            broker: Arc::new(broker),
            nodes,
            transport,
            clock,
        })
    }

    pub fn provider_url(&self, i: usize) -> &str {
        self.nodes[i].public_url()
    }

    pub fn client_keys(&self) -> KeyRing {
        self.files.client_keys().expect("fixture keys are readable")
    }

    /// Signs agents from the client to the broker.
    pub fn client_signer(&self) -> Signer {
        self.client_keys()
            .signer_for(BROKER_PRINCIPAL, CLIENT_PRINCIPAL, Duration::from_secs(300))
            .expect("client shares a secret with the broker")
    }
}

/// The same deployment served over loopback HTTP on the system clock.
pub struct HttpFixture {
    pub files: FixtureFiles,
    pub broker: Arc<Broker>,
    pub broker_url: String,
    pub provider_urls: Vec<String>,
    tasks: Vec<JoinHandle<()>>,
}

async fn bind() -> Result<(tokio::net::TcpListener, String), ServiceError> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let addr = listener.local_addr().map_err(|e| ServiceError::Internal(e.to_string()))?;
    Ok((listener, format!("http://{addr}")))
}

impl HttpFixture {
    pub async fn start(options: FixtureOptions) -> Result<Self, ServiceError> {
        let files = FixtureFiles::create(options)?;
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let mut tasks = Vec::new();
        let mut provider_urls = Vec::new();
        for i in 0..files.providers.len() {
            let (listener, url) = bind().await?;
            let node = Arc::new(files.provider_node(i, &url, clock.clone())?);
            tasks.push(tokio::spawn(async move {
                let _ = axum::serve(listener, provider_router(node)).await;
            }));
            provider_urls.push(url);
        }
        let (listener, broker_url) = bind().await?;
        let http = HttpTransport::new(Duration::from_secs(60));
        let transport: Arc<dyn ProviderTransport> = Arc::new(http.clone());
        let broker = Arc::new(Broker::new(
            files.broker_settings(&broker_url, &provider_urls),
            files.broker_keys()?,
            transport,
            Arc::new(http),
            clock,
        )?);
        let router = broker_router(broker.clone());
        tasks.push(tokio::spawn(async move {
            let _ = axum::serve(listener, router).await;
        }));
        Ok(Self {
            files,
            broker,
            broker_url,
            provider_urls,
            tasks,
        })
    }

    /// Stops provider `i`'s listener so new connections are refused.
    pub fn stop_provider(&self, i: usize) {
        self.tasks[i].abort();
    }
}

impl Drop for HttpFixture {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}
