//! Content-addressed blob store.
//!
//! Blobs are addressed by their SHA-256 digest and re-verified on every read.
//! The on-disk layout is one file per blob named by the hex address plus an
//! `index.json` listing `{address, size, stored_at}`; an in-memory backend
//! with the same semantics is used by the simulator.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{compute_hash_id, HashId};

/// Content digest of a stored blob.
pub type AddressHash = HashId;

const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("refusing to store an empty blob")]
    EmptyBlob,
    #[error("store capacity of {capacity} bytes exceeded")]
    StorageFull { capacity: u64 },
    #[error("no blob stored at {0}")]
    NotFound(AddressHash),
    #[error("blob at {address} is corrupt (content digest {actual})")]
    IntegrityViolation { address: AddressHash, actual: AddressHash },
    #[error("store index is unreadable: {0}")]
    CorruptIndex(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub address: AddressHash,
    pub size: u64,
    pub stored_at: u64,
}

#[derive(Debug)]
enum Backend {
    Memory(BTreeMap<AddressHash, Vec<u8>>),
    Disk(PathBuf),
}

#[derive(Debug)]
struct Inner {
    backend: Backend,
    index: BTreeMap<AddressHash, IndexEntry>,
    clock: u64,
    used: u64,
}

/// Writes are serialized behind the lock; reads only take it shared.
#[derive(Debug)]
pub struct ContentStore {
    inner: RwLock<Inner>,
    capacity: Option<u64>,
}

impl ContentStore {
    pub fn in_memory() -> Self {
        Self::with_backend(Backend::Memory(BTreeMap::new()), BTreeMap::new())
    }

    /// Opens (or creates) a store rooted at `dir`, reloading its index.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let index_path = dir.join(INDEX_FILE);
        let index = if index_path.exists() {
            let entries: Vec<IndexEntry> =
                serde_json::from_slice(&fs::read(&index_path)?).map_err(|e| StoreError::CorruptIndex(e.to_string()))?;
            entries.into_iter().map(|e| (e.address, e)).collect()
        } else {
            BTreeMap::new()
        };
        Ok(Self::with_backend(Backend::Disk(dir), index))
    }

    fn with_backend(backend: Backend, index: BTreeMap<AddressHash, IndexEntry>) -> Self {
        let clock = index.values().map(|e| e.stored_at + 1).max().unwrap_or(0);
        let used = index.values().map(|e| e.size).sum();
        Self {
            inner: RwLock::new(Inner {
                backend,
                index,
                clock,
                used,
            }),
            capacity: None,
        }
    }

    pub fn with_capacity(mut self, bytes: u64) -> Self {
        self.capacity = Some(bytes);
        self
    }

    pub fn put(&self, bytes: &[u8]) -> Result<AddressHash, StoreError> {
        if bytes.is_empty() {
            return Err(StoreError::EmptyBlob);
        }
        let address = compute_hash_id(bytes);
        let mut inner = self.inner.write().expect("store lock poisoned");
        if inner.index.contains_key(&address) {
            return Ok(address);
        }
        let size = bytes.len() as u64;
        if let Some(capacity) = self.capacity {
            if inner.used + size > capacity {
                return Err(StoreError::StorageFull { capacity });
            }
        }
        let stored_at = inner.clock;
        match &mut inner.backend {
            Backend::Memory(map) => {
                map.insert(address, bytes.to_vec());
            }
            Backend::Disk(dir) => fs::write(dir.join(address.to_hex()), bytes)?,
        }
        inner.index.insert(
            address,
            IndexEntry {
                address,
                size,
                stored_at,
            },
        );
        inner.clock += 1;
        inner.used += size;
        if let Backend::Disk(dir) = &inner.backend {
            let entries: Vec<&IndexEntry> = inner.index.values().collect();
            let json = serde_json::to_vec_pretty(&entries).expect("index serializes");
            fs::write(dir.join(INDEX_FILE), json)?;
        }
        Ok(address)
    }

    pub fn get(&self, address: &AddressHash) -> Result<Vec<u8>, StoreError> {
        let inner = self.inner.read().expect("store lock poisoned");
        if !inner.index.contains_key(address) {
            return Err(StoreError::NotFound(*address));
        }
        let bytes = match &inner.backend {
            Backend::Memory(map) => map.get(address).cloned().ok_or(StoreError::NotFound(*address))?,
            Backend::Disk(dir) => match fs::read(dir.join(address.to_hex())) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(*address)),
                Err(e) => return Err(e.into()),
            },
        };
        let actual = compute_hash_id(&bytes);
        if actual != *address {
            return Err(StoreError::IntegrityViolation {
                address: *address,
                actual,
            });
        }
        Ok(bytes)
    }

    pub fn contains(&self, address: &AddressHash) -> bool {
        self.inner
            .read()
            .expect("store lock poisoned")
            .index
            .contains_key(address)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("store lock poisoned").index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<IndexEntry> {
        self.inner
            .read()
            .expect("store lock poisoned")
            .index
            .values()
            .cloned()
            .collect()
    }

    /// Path of a blob file, for disk-backed stores.
    pub fn blob_path(&self, address: &AddressHash) -> Option<PathBuf> {
        match &self.inner.read().expect("store lock poisoned").backend {
            Backend::Disk(dir) => Some(dir.join(address.to_hex())),
            Backend::Memory(_) => None,
        }
    }
}
