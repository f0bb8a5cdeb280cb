//! Flat content-addressed PNG directory: `{root}/{sha256 of the PNG}.png`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use restorekit_core::orchestrator::{ImageStore, StoreError};
use restorekit_core::{ContentHash, Raster};

use crate::png_io;

#[derive(Debug, Clone)]
pub struct PngBlobStore {
    root: PathBuf,
}

fn io(e: impl std::fmt::Display) -> StoreError {
    StoreError::Io(e.to_string())
}

impl PngBlobStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(io)?;
        Ok(PngBlobStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, id: &ContentHash) -> PathBuf {
        self.root.join(format!("{id}.png"))
    }

    /// Stores encoded bytes under their digest. Writes go through a
    /// temporary file and a rename, so a reader never sees a partial blob.
    pub fn put_bytes(&self, bytes: &[u8]) -> Result<ContentHash, StoreError> {
        let id = ContentHash::of_bytes(bytes);
        let dest = self.path(&id);
        if dest.exists() {
            return Ok(id);
        }
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io)?;
        tmp.write_all(bytes).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&dest).map_err(io)?;
        Ok(id)
    }

    /// The stored bytes, checked against their address.
    pub fn get_bytes(&self, id: &ContentHash) -> Result<Vec<u8>, StoreError> {
        let bytes = match std::fs::read(self.path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(*id)),
            Err(e) => return Err(io(e)),
        };
        let actual = ContentHash::of_bytes(&bytes);
        if actual != *id {
            return Err(StoreError::Corrupt { id: *id, actual });
        }
        Ok(bytes)
    }

    pub fn contains(&self, id: &ContentHash) -> bool {
        self.path(id).exists()
    }
}

impl ImageStore for PngBlobStore {
    fn put_raster(&self, raster: &Raster) -> Result<ContentHash, StoreError> {
        let png = png_io::encode(raster).map_err(io)?;
        self.put_bytes(&png)
    }

    fn get_raster(&self, id: &ContentHash) -> Result<Arc<Raster>, StoreError> {
        let bytes = self.get_bytes(id)?;
        Ok(Arc::new(png_io::decode(&bytes).map_err(io)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_is_the_png_digest() {
        let dir = tempfile::tempdir().unwrap();
        let store = PngBlobStore::open(dir.path()).unwrap();
        let r = Raster::from_fn(40, 40, |x, y| [x as u8, y as u8, 7]);
        let id = store.put_raster(&r).unwrap();
        assert_eq!(id, ContentHash::of_bytes(&png_io::encode(&r).unwrap()));
        assert_eq!(*store.get_raster(&id).unwrap(), r);
        assert_eq!(store.put_raster(&r).unwrap(), id);
    }

    #[test]
    fn tampered_blobs_are_corrupt_and_missing_ones_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = PngBlobStore::open(dir.path()).unwrap();
        let id = store.put_raster(&Raster::filled(32, 32, [1, 2, 3])).unwrap();
        let mut bytes = std::fs::read(store.path(&id)).unwrap();
        let n = bytes.len();
        bytes[n - 20] ^= 0xff;
        std::fs::write(store.path(&id), bytes).unwrap();
        assert!(matches!(store.get_bytes(&id), Err(StoreError::Corrupt { .. })));
        let other = ContentHash::of_bytes(b"nothing");
        assert_eq!(store.get_bytes(&other), Err(StoreError::NotFound(other)));
    }
}
