use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use spin::Mutex;

use super::{ImageRef, ProvenanceRef, SessionLog};
use crate::domain::{ContentHash, DomainError, ImageState, Provenance, Raster};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("image {0} not found")]
    NotFound(ContentHash),
    #[error("blob {id} is corrupt: content hashes to {actual}")]
    Corrupt { id: ContentHash, actual: ContentHash },
    #[error("session {0} already exists")]
    Duplicate(String),
    #[error("storage: {0}")]
    Io(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Content-addressed raster storage. The address is whatever the store
/// hashes (raw pixels here, encoded PNG bytes on disk).
pub trait ImageStore: Send + Sync {
    fn put_raster(&self, raster: &Raster) -> Result<ContentHash, StoreError>;
    fn get_raster(&self, id: &ContentHash) -> Result<Arc<Raster>, StoreError>;

    /// Stores the image and, when present, its clean reference.
    fn put(&self, image: &ImageState) -> Result<ImageRef, StoreError> {
        let id = self.put_raster(&image.raster)?;
        let provenance = match &image.provenance {
            Some(p) => Some(ProvenanceRef { clean: self.put_raster(&p.clean)?, stack: p.stack.clone() }),
            None => None,
        };
        Ok(ImageRef { id, provenance })
    }

    fn get(&self, r: &ImageRef) -> Result<ImageState, StoreError> {
        let raster = (*self.get_raster(&r.id)?).clone();
        Ok(match &r.provenance {
            Some(p) => ImageState::with_provenance(raster, Provenance::new(self.get_raster(&p.clean)?, p.stack.clone()))?,
            None => ImageState::new(raster)?,
        })
    }
}

/// Rasters keyed by pixel digest.
#[derive(Default)]
pub struct MemoryImageStore {
    blobs: Mutex<BTreeMap<ContentHash, Arc<Raster>>>,
}

impl MemoryImageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blobs.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ImageStore for MemoryImageStore {
    fn put_raster(&self, raster: &Raster) -> Result<ContentHash, StoreError> {
        let id = raster.digest();
        self.blobs.lock().entry(id).or_insert_with(|| Arc::new(raster.clone()));
        Ok(id)
    }

    fn get_raster(&self, id: &ContentHash) -> Result<Arc<Raster>, StoreError> {
        self.blobs.lock().get(id).cloned().ok_or(StoreError::NotFound(*id))
    }
}

pub trait Clock: Send + Sync {
    /// Wall time for event timestamps.
    fn now_ms(&self) -> u64;
    /// Monotonic microseconds for durations.
    fn monotonic_us(&self) -> u64;
}

/// Always zero: deterministic logs, no timings.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ms(&self) -> u64 {
        0
    }

    fn monotonic_us(&self) -> u64 {
        0
    }
}

/// Live sessions, each behind its own lock so that transitions on one
/// session are serialized without blocking the others.
#[derive(Default)]
pub struct SessionIndex {
    sessions: Mutex<BTreeMap<String, Arc<Mutex<SessionLog>>>>,
}

impl SessionIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, log: SessionLog) -> Result<Arc<Mutex<SessionLog>>, StoreError> {
        let mut map = self.sessions.lock();
        let id = log.session.id.clone();
        if map.contains_key(&id) {
            return Err(StoreError::Duplicate(id));
        }
        let entry = Arc::new(Mutex::new(log));
        map.insert(id, entry.clone());
        Ok(entry)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<SessionLog>>> {
        self.sessions.lock().get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.lock().keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
