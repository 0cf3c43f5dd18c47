//! The broker's main index: provider shards merged into one exhaustively
//! ranked collection of (descriptor, feature) entries.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gabor::{self, GaborError, TextureFeatureVector};
use crate::wire::{Reader, WireError, Writer};
use crate::Timestamp;

const SNAPSHOT_MAGIC: &[u8; 4] = b"CBIX";
const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("shard from {provider} rejected: entry {image_id} {reason}")]
    InvalidShard {
        provider: String,
        image_id: String,
        reason: String,
    },
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Comparison(#[from] GaborError),
    #[error("corrupt snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<WireError> for IndexError {
    fn from(e: WireError) -> Self {
        Self::Snapshot(e.to_string())
    }
}

/// What a query result says about one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDescriptor {
    pub provider_url: String,
    pub image_id: String,
    /// PNG bytes.
    #[serde(with = "crate::b64")]
    pub thumbnail: Vec<u8>,
    /// Texture distance to the query; smaller is more similar. Only set in results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

impl ImageDescriptor {
    pub fn key(&self) -> (&str, &str) {
        (&self.provider_url, &self.image_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub descriptor: ImageDescriptor,
    pub feature: TextureFeatureVector,
}

/// An archive file the index agent could not decode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub image_id: String,
    pub reason: String,
}

/// One provider's complete set of entries, as produced by an index agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexShard {
    pub provider_url: String,
    pub generated_at: Timestamp,
    pub entries: Vec<IndexEntry>,
    #[serde(default)]
    pub skipped: Vec<SkippedImage>,
}

impl IndexShard {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(&self.provider_url).u64(self.generated_at.0);
        w.u32(self.entries.len() as u32);
        for e in &self.entries {
            write_entry(&mut w, e);
        }
        w.u32(self.skipped.len() as u32);
        for s in &self.skipped {
            w.str(&s.image_id).str(&s.reason);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let shard = Self::read(&mut r)?;
        r.finish()?;
        Ok(shard)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let provider_url = r.string()?;
        let generated_at = Timestamp(r.u64()?);
        let n = r.count(16)?;
        let entries = (0..n).map(|_| read_entry(r)).collect::<Result<_, _>>()?;
        let n = r.count(8)?;
        let skipped = (0..n)
            .map(|_| {
                Ok(SkippedImage {
                    image_id: r.string()?,
                    reason: r.string()?,
                })
            })
            .collect::<Result<_, WireError>>()?;
        Ok(Self {
            provider_url,
            generated_at,
            entries,
            skipped,
        })
    }

    /// Index invariants for every entry, checked before any of it is merged.
    pub fn validate(&self) -> Result<(), IndexError> {
        let reject = |id: &str, reason: &str| IndexError::InvalidShard {
            provider: self.provider_url.clone(),
            image_id: id.to_string(),
            reason: reason.to_string(),
        };
        let mut seen = std::collections::BTreeSet::new();
        let dims = self.entries.first().map(|e| (e.feature.scales(), e.feature.orientations()));
        for e in &self.entries {
            let d = &e.descriptor;
            if d.provider_url != self.provider_url {
                return Err(reject(&d.image_id, "belongs to another provider"));
            }
            if !e.feature.is_normalized() {
                return Err(reject(&d.image_id, "has an unnormalized feature"));
            }
            if d.thumbnail.is_empty() {
                return Err(reject(&d.image_id, "has an empty thumbnail"));
            }
            if Some((e.feature.scales(), e.feature.orientations())) != dims {
                return Err(reject(&d.image_id, "has a feature of different dimensions"));
            }
            if !seen.insert(d.image_id.as_str()) {
                return Err(reject(&d.image_id, "appears twice"));
            }
        }
        Ok(())
    }
}

fn write_entry(w: &mut Writer, e: &IndexEntry) {
    w.str(&e.descriptor.provider_url)
        .str(&e.descriptor.image_id)
        .bytes(&e.descriptor.thumbnail)
        .bytes(&e.feature.to_bytes());
}

fn read_entry(r: &mut Reader<'_>) -> Result<IndexEntry, WireError> {
    let provider_url = r.string()?;
    let image_id = r.string()?;
    let thumbnail = r.bytes()?.to_vec();
    let feature =
        TextureFeatureVector::from_bytes(r.bytes()?).map_err(|e| WireError::Invalid(e.to_string()))?;
    Ok(IndexEntry {
        descriptor: ImageDescriptor {
            provider_url,
            image_id,
            thumbnail,
            similarity: None,
        },
        feature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ProviderRecord {
    generated_at: Timestamp,
    merged_at: Timestamp,
}

/// Result of [`FeatureIndex::merge_shard`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeOutcome {
    Applied {
        inserted: usize,
        replaced: usize,
        removed: usize,
    },
    /// The index already holds a newer shard for this provider.
    Stale,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureIndex {
    entries: BTreeMap<(String, String), IndexEntry>,
    providers: BTreeMap<String, ProviderRecord>,
}

impl FeatureIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.values()
    }

    pub fn get(&self, provider_url: &str, image_id: &str) -> Option<&IndexEntry> {
        self.entries.get(&(provider_url.to_string(), image_id.to_string()))
    }

    pub fn providers(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(String::as_str)
    }

    /// Makes the shard the complete record for its provider: entries are
    /// upserted by (provider, image id) and the provider's entries missing
    /// from the shard are dropped. A shard older than the one already merged
    /// is ignored. An invalid shard is rejected whole, leaving the index as it was.
    pub fn merge_shard(&mut self, shard: IndexShard, merged_at: Timestamp) -> Result<MergeOutcome, IndexError> {
        shard.validate()?;
        if let (Some(ours), Some(first)) = (self.feature_dims_excluding(&shard.provider_url), shard.entries.first()) {
            let theirs = (first.feature.scales(), first.feature.orientations());
            if ours != theirs {
                return Err(GaborError::DimensionMismatch { left: ours, right: theirs }.into());
            }
        }
        if let Some(rec) = self.providers.get(&shard.provider_url) {
            if shard.generated_at < rec.generated_at {
                return Ok(MergeOutcome::Stale);
            }
        }

        let provider = shard.provider_url.clone();
        let incoming: BTreeMap<_, _> = shard
            .entries
            .into_iter()
            .map(|e| ((provider.clone(), e.descriptor.image_id.clone()), e))
            .collect();
        let stale_keys: Vec<_> = self
            .entries
            .range((provider.clone(), String::new())..)
            .take_while(|((p, _), _)| *p == provider)
            .map(|(k, _)| k.clone())
            .filter(|k| !incoming.contains_key(k))
            .collect();
        let removed = stale_keys.len();
        for k in stale_keys {
            self.entries.remove(&k);
        }
        let (mut inserted, mut replaced) = (0, 0);
        for (k, e) in incoming {
            match self.entries.insert(k, e) {
                Some(_) => replaced += 1,
                None => inserted += 1,
            }
        }
        self.providers.insert(
            provider,
            ProviderRecord {
                generated_at: shard.generated_at,
                merged_at,
            },
        );
        Ok(MergeOutcome::Applied {
            inserted,
            replaced,
            removed,
        })
    }

    fn feature_dims_excluding(&self, provider: &str) -> Option<(usize, usize)> {
        self.entries
            .iter()
            .find(|((p, _), _)| p != provider)
            .map(|(_, e)| (e.feature.scales(), e.feature.orientations()))
    }

    /// Up to `k` descriptors ordered by ascending distance to `query`, ties
    /// broken by (provider URL, image id).
    pub fn query(&self, query: &TextureFeatureVector, k: usize) -> Result<Vec<ImageDescriptor>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if !query.is_normalized() {
            return Err(GaborError::NotNormalized.into());
        }
        let mut scored = self
            .entries
            .values()
            .map(|e| gabor::distance(query, &e.feature).map(|d| (d, e)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|(da, a), (db, b)| {
            da.total_cmp(db)
                .then_with(|| a.descriptor.key().cmp(&b.descriptor.key()))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(d, e)| ImageDescriptor {
                similarity: Some(d),
                ..e.descriptor.clone()
            })
            .collect())
    }

    /// Time since the provider's last merged shard; `None` if never merged.
    pub fn provider_staleness(&self, provider_url: &str, now: Timestamp) -> Option<Duration> {
        self.providers.get(provider_url).map(|r| now.since(r.merged_at))
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(SNAPSHOT_MAGIC).u16(SNAPSHOT_VERSION);
        w.u32(self.providers.len() as u32);
        for (url, rec) in &self.providers {
            w.str(url).u64(rec.generated_at.0).u64(rec.merged_at.0);
        }
        w.u32(self.entries.len() as u32);
        for e in self.entries.values() {
            write_entry(&mut w, e);
        }
        let mut bytes = w.finish();
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_be_bytes());
        bytes
    }

    pub fn restore(bytes: &[u8]) -> Result<Self, IndexError> {
        let corrupt = |m: &str| IndexError::Snapshot(m.to_string());
        if bytes.len() < SNAPSHOT_MAGIC.len() + 2 + 4 {
            return Err(corrupt("too short"));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if !body.starts_with(SNAPSHOT_MAGIC) {
            return Err(corrupt("bad magic"));
        }
        if crc32fast::hash(body).to_be_bytes() != crc {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader::new(&body[SNAPSHOT_MAGIC.len()..]);
        let version = r.u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(IndexError::Snapshot(format!("unsupported version {version}")));
        }
        let mut index = Self::new();
        for _ in 0..r.count(20)? {
            let url = r.string()?;
            let rec = ProviderRecord {
                generated_at: Timestamp(r.u64()?),
                merged_at: Timestamp(r.u64()?),
            };
            index.providers.insert(url, rec);
        }
        for _ in 0..r.count(16)? {
            let e = read_entry(&mut r)?;
            if !e.feature.is_normalized() {
                return Err(corrupt("unnormalized feature"));
            }
            let key = (e.descriptor.provider_url.clone(), e.descriptor.image_id.clone());
            if index.entries.insert(key, e).is_some() {
                return Err(corrupt("duplicate entry"));
            }
        }
        r.finish()?;
        Ok(index)
    }

    /// Writes the snapshot to a sibling temporary file and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.snapshot())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::restore(&std::fs::read(path)?)
    }
}
