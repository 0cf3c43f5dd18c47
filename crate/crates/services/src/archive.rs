//! A provider's image archive and its license records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cbir_core::imaging::ImageFormat;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub id: String,
    /// Relative to the archive directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub images: Vec<ArchiveEntry>,
}

/// Read-only view of an archive directory described by `manifest.json`.
#[derive(Debug, Clone)]
pub struct Archive {
    dir: PathBuf,
    entries: BTreeMap<String, ArchiveEntry>,
}

impl Archive {
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| ServiceError::Internal(format!("reading {}: {e}", manifest_path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| ServiceError::Internal(format!("parsing {}: {e}", manifest_path.display())))?;
        Self::from_manifest(dir, manifest)
    }

    pub fn from_manifest(dir: &Path, manifest: Manifest) -> Result<Self, ServiceError> {
        let mut entries = BTreeMap::new();
        for e in manifest.images {
            if e.path.is_absolute() || e.path.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                return Err(ServiceError::Internal(format!(
                    "manifest path {} escapes the archive",
                    e.path.display()
                )));
            }
            if entries.insert(e.id.clone(), e.clone()).is_some() {
                return Err(ServiceError::Internal(format!("duplicate image id {:?} in manifest", e.id)));
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entry(&self, id: &str) -> Option<&ArchiveEntry> {
        self.entries.get(id)
    }

    pub fn path_of(&self, id: &str) -> Option<PathBuf> {
        self.entries.get(id).map(|e| self.dir.join(&e.path))
    }

    /// Raw archive bytes and their detected format.
    pub fn read(&self, id: &str) -> Result<(Vec<u8>, ImageFormat), ServiceError> {
        let path = self
            .path_of(id)
            .ok_or_else(|| ServiceError::NotFound(format!("image {id:?}")))?;
        let bytes =
            std::fs::read(&path).map_err(|e| ServiceError::Internal(format!("reading {}: {e}", path.display())))?;
        let format = ImageFormat::detect(&bytes)
            .or_else(|| ImageFormat::from_extension(&path))
            .ok_or_else(|| ServiceError::Input(format!("{} is neither PGM nor PNG", path.display())))?;
        Ok((bytes, format))
    }
}

/// Wildcard image id: the license covers every image of the provider.
pub const ANY_IMAGE: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LicenseRecord {
    pub token: String,
    pub image_id: String,
    pub purchaser_id: String,
    pub uses_remaining: u32,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct LicenseFile {
    licenses: Vec<LicenseRecord>,
}

/// License records with atomic check-and-decrement, persisted on every use.
#[derive(Debug)]
pub struct LicenseStore {
    path: Option<PathBuf>,
    records: Mutex<Vec<LicenseRecord>>,
}

impl LicenseStore {
    pub fn in_memory(records: Vec<LicenseRecord>) -> Self {
        Self {
            path: None,
            records: Mutex::new(records),
        }
    }

    /// Loads `path`; a missing file is an empty store that will be created on first use.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let records = match std::fs::read_to_string(path) {
            Ok(text) => {
                serde_json::from_str::<LicenseFile>(&text)
                    .map_err(|e| ServiceError::Internal(format!("parsing {}: {e}", path.display())))?
                    .licenses
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(ServiceError::Internal(format!("reading {}: {e}", path.display()))),
        };
        Ok(Self {
            path: Some(path.to_path_buf()),
            records: Mutex::new(records),
        })
    }

    pub fn records(&self) -> Vec<LicenseRecord> {
        self.records.lock().clone()
    }

    fn find<'a>(
        records: &'a mut [LicenseRecord],
        token: &str,
        image_id: &str,
        purchaser_id: &str,
    ) -> Result<&'a mut LicenseRecord, ServiceError> {
        if token.is_empty() {
            return Err(ServiceError::AccessDenied("no license token presented".into()));
        }
        let rec = records
            .iter_mut()
            .find(|r| r.token == token)
            .ok_or_else(|| ServiceError::AccessDenied("unknown license token".into()))?;
        if rec.image_id != ANY_IMAGE && rec.image_id != image_id {
            return Err(ServiceError::AccessDenied(format!("license does not cover image {image_id:?}")));
        }
        if rec.purchaser_id != purchaser_id {
            return Err(ServiceError::AccessDenied("license belongs to another purchaser".into()));
        }
        if rec.uses_remaining == 0 {
            return Err(ServiceError::AccessDenied("license has no uses remaining".into()));
        }
        Ok(rec)
    }

    /// Whether a retrieval would currently be authorized. Does not consume a use.
    pub fn check(&self, token: &str, image_id: &str, purchaser_id: &str) -> Result<(), ServiceError> {
        Self::find(&mut self.records.lock(), token, image_id, purchaser_id).map(|_| ())
    }

    /// Authorizes one retrieval and consumes a use, persisting the change.
    pub fn consume(&self, token: &str, image_id: &str, purchaser_id: &str) -> Result<(), ServiceError> {
        let mut records = self.records.lock();
        Self::find(&mut records, token, image_id, purchaser_id)?.uses_remaining -= 1;
        if let Some(path) = &self.path {
            if let Err(e) = persist(path, &records) {
                // keep the in-memory and on-disk stores consistent
                Self::find_any(&mut records, token).uses_remaining += 1;
                return Err(e);
            }
        }
        Ok(())
    }

    fn find_any<'a>(records: &'a mut [LicenseRecord], token: &str) -> &'a mut LicenseRecord {
        records.iter_mut().find(|r| r.token == token).expect("token was just found")
    }
}

fn persist(path: &Path, records: &[LicenseRecord]) -> Result<(), ServiceError> {
    let io = |e: std::io::Error| ServiceError::Internal(format!("writing {}: {e}", path.display()));
    let text = serde_json::to_vec_pretty(&LicenseFile {
        licenses: records.to_vec(),
    })
    .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    std::io::Write::write_all(&mut tmp, &text).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
