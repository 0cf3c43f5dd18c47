//! An image provider's agent server.

use std::sync::Arc;
use std::time::Duration;

use cbir_core::gabor::{extract_feature, FilterBank, FilterBankParams};
use cbir_core::imaging::{self, ImageFormat};
use cbir_core::index::{ImageDescriptor, IndexEntry, IndexShard, SkippedImage};
use cbir_core::protocol::{
    make_return, AgentEnvelope, AgentKind, IndexState, KeyRing, SearchItemResult, SearchOutcome, SearchState,
};
use cbir_core::watermark;
use parking_lot::Mutex;
use rayon::prelude::*;

use crate::archive::{Archive, LicenseStore};
use crate::clock::Clock;
use crate::ServiceError;

pub struct ProviderNode {
    public_url: String,
    keys: KeyRing,
    archive: Archive,
    licenses: LicenseStore,
    clock: Arc<dyn Clock>,
    validity: Duration,
    bank: Mutex<Option<Arc<FilterBank>>>,
}

impl ProviderNode {
    pub fn new(
        public_url: impl Into<String>,
        keys: KeyRing,
        archive: Archive,
        licenses: LicenseStore,
        clock: Arc<dyn Clock>,
        validity: Duration,
    ) -> Self {
        Self {
            public_url: public_url.into(),
            keys,
            archive,
            licenses,
            clock,
            validity,
            bank: Mutex::new(None),
        }
    }

    pub fn public_url(&self) -> &str {
        &self.public_url
    }

    pub fn principal(&self) -> &str {
        self.keys.principal()
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn licenses(&self) -> &LicenseStore {
        &self.licenses
    }

    /// Entry point for `POST /agents`: verifies, then runs the agent's task.
    pub fn handle_agent(&self, envelope: &AgentEnvelope) -> Result<AgentEnvelope, ServiceError> {
        match envelope.kind {
            AgentKind::Index => self.execute_index_agent(envelope),
            AgentKind::Search => self.execute_search_agent(envelope),
            other => Err(ServiceError::BadRequest(format!("providers do not host {other} agents"))),
        }
    }

    fn admit(&self, envelope: &AgentEnvelope, kind: AgentKind) -> Result<(), ServiceError> {
        self.keys.verify_kind(envelope, kind, self.clock.now())?;
        if envelope.itinerary.first().map(String::as_str) != Some(self.public_url.as_str()) {
            return Err(ServiceError::BadRequest(format!(
                "agent is addressed to {:?}, not {}",
                envelope.itinerary.first(),
                self.public_url
            )));
        }
        Ok(())
    }

    fn send_back(&self, inbound: &AgentEnvelope, state: Vec<u8>) -> AgentEnvelope {
        let signer = self
            .keys
            .signer_for(&inbound.certificate.issuer, self.principal(), self.validity)
            .expect("issuer verified against this key ring");
        make_return(inbound, state, &signer, self.clock.now())
    }

    fn bank_for(&self, params: &FilterBankParams) -> Result<Arc<FilterBank>, ServiceError> {
        let mut cached = self.bank.lock();
        if let Some(bank) = cached.as_ref().filter(|b| b.params() == params) {
            return Ok(bank.clone());
        }
        let bank = Arc::new(FilterBank::new(*params).map_err(|e| ServiceError::BadRequest(e.to_string()))?);
        *cached = Some(bank.clone());
        Ok(bank)
    }

    pub fn execute_index_agent(&self, envelope: &AgentEnvelope) -> Result<AgentEnvelope, ServiceError> {
        self.admit(envelope, AgentKind::Index)?;
        let task = match IndexState::decode(&envelope.state)? {
            IndexState::Task(task) => task,
            IndexState::Shard(_) => return Err(ServiceError::BadRequest("index agent already carries a shard".into())),
        };
        let shard = self.build_shard(&task.bank)?;
        tracing::info!(
            provider = %self.public_url,
            entries = shard.entries.len(),
            skipped = shard.skipped.len(),
            "index agent finished"
        );
        Ok(self.send_back(envelope, IndexState::Shard(shard).encode()))
    }

    /// Features and thumbnails for the whole archive. Files that cannot be
    /// read or decoded are reported in `skipped`.
    pub fn build_shard(&self, params: &FilterBankParams) -> Result<IndexShard, ServiceError> {
        let bank = self.bank_for(params)?;
        let ids: Vec<&str> = self.archive.ids().collect();
        let results: Vec<Result<IndexEntry, SkippedImage>> = ids
            .par_iter()
            .map(|&id| {
                let skip = |reason: String| SkippedImage {
                    image_id: id.to_string(),
                    reason,
                };
                let (bytes, _) = self.archive.read(id).map_err(|e| skip(e.to_string()))?;
                let (raster, _) = imaging::decode(&bytes).map_err(|e| skip(e.to_string()))?;
                let thumbnail = imaging::thumbnail_png(&raster).map_err(|e| skip(e.to_string()))?;
                let feature = extract_feature(&imaging::preprocess(&raster), &bank);
                Ok(IndexEntry {
                    descriptor: ImageDescriptor {
                        provider_url: self.public_url.clone(),
                        image_id: id.to_string(),
                        thumbnail,
                        similarity: None,
                    },
                    feature,
                })
            })
            .collect();
        let mut shard = IndexShard {
            provider_url: self.public_url.clone(),
            generated_at: self.clock.now(),
            entries: Vec::new(),
            skipped: Vec::new(),
        };
        for r in results {
            match r {
                Ok(e) => shard.entries.push(e),
                Err(s) => {
                    tracing::warn!(provider = %self.public_url, image = %s.image_id, reason = %s.reason, "skipping archive file");
                    shard.skipped.push(s);
                }
            }
        }
        Ok(shard)
    }

    /// Free PNG preview, at most 96 pixels on its longest side.
    pub fn get_thumbnail(&self, image_id: &str) -> Result<Vec<u8>, ServiceError> {
        let (bytes, _) = self.archive.read(image_id)?;
        let (raster, _) = imaging::decode(&bytes)?;
        Ok(imaging::thumbnail_png(&raster)?)
    }

    /// The full image, watermarked with `purchaser_id`, in its archive format.
    /// A use is consumed only when the watermarked bytes are ready.
    pub fn retrieve_full(
        &self,
        image_id: &str,
        token: &str,
        purchaser_id: &str,
    ) -> Result<(ImageFormat, Vec<u8>), ServiceError> {
        let (bytes, format) = self.archive.read(image_id)?;
        self.licenses.check(token, image_id, purchaser_id)?;
        let (raster, _) = imaging::decode(&bytes)?;
        let marked = watermark::embed(&raster, purchaser_id).map_err(|e| ServiceError::Input(e.to_string()))?;
        let out = imaging::encode(&marked, format)?;
        self.licenses.consume(token, image_id, purchaser_id)?;
        tracing::info!(provider = %self.public_url, image = image_id, purchaser = purchaser_id, "released full image");
        Ok((format, out))
    }

    pub fn execute_search_agent(&self, envelope: &AgentEnvelope) -> Result<AgentEnvelope, ServiceError> {
        self.admit(envelope, AgentKind::Search)?;
        let task = match SearchState::decode(&envelope.state)? {
            SearchState::Task(task) => task,
            SearchState::Results(_) => {
                return Err(ServiceError::BadRequest("search agent already carries results".into()))
            }
        };
        let results = task
            .items
            .iter()
            .map(|item| {
                let outcome = match self.retrieve_full(&item.image_id, &item.token, &item.purchaser_id) {
                    Ok((format, bytes)) => SearchOutcome::Image { format, bytes },
                    Err(ServiceError::AccessDenied(reason)) => SearchOutcome::AccessDenied { reason },
                    Err(ServiceError::NotFound(_)) => SearchOutcome::NotFound,
                    Err(e) => SearchOutcome::Failed { reason: e.to_string() },
                };
                SearchItemResult {
                    image_id: item.image_id.clone(),
                    outcome,
                }
            })
            .collect();
        Ok(self.send_back(envelope, SearchState::Results(results).encode()))
    }
}
