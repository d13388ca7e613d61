//! Append-only store of image embeddings with snapshot reads.
//!
//! A [`Store`] owns its records behind an `Arc`; [`Store::snapshot`] hands
//! out a clone of that `Arc`. Ingest copies on write when a snapshot is still
//! alive, so snapshots never observe later writes.

mod format;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::embedding::EmbeddingVector;

pub use format::{inspect, FileSummary, FORMAT_VERSION, HEADER_LEN, MAGIC};

pub const MAX_ID_BYTES: usize = 4096;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),
    #[error("record {id:?}: dimension {actual} does not match store dimension {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("record {0:?} not found")]
    NotFound(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: not a vector store file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("checksum mismatch: header {expected:#010x}, computed {actual:#010x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
    #[error("truncated file")]
    TruncatedFile,
    #[error("corrupt store: {0}")]
    Corrupt(String),
}

/// One dataset item.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    /// Location of the source image. Opaque to the store.
    pub uri: String,
    pub embedding: EmbeddingVector,
    pub tags: BTreeMap<String, String>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, uri: impl Into<String>, embedding: EmbeddingVector) -> Self {
        Self {
            id: id.into(),
            uri: uri.into(),
            embedding,
            tags: BTreeMap::new(),
        }
    }

    pub fn with_tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.insert(key.into(), value.into());
        self
    }

    /// Equality that compares embedding payloads by bit pattern.
    pub fn bit_eq(&self, other: &ImageRecord) -> bool {
        self.id == other.id
            && self.uri == other.uri
            && self.tags == other.tags
            && self.embedding.dim() == other.embedding.dim()
            && self
                .embedding
                .values()
                .iter()
                .zip(other.embedding.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn check_limits(&self) -> Result<(), StoreError> {
        let invalid = |reason: String| StoreError::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() || self.id.len() > MAX_ID_BYTES {
            return Err(invalid(format!(
                "id length {} outside [1, {MAX_ID_BYTES}] bytes",
                self.id.len()
            )));
        }
        if u32::try_from(self.uri.len()).is_err() {
            return Err(invalid("uri longer than 4 GiB".into()));
        }
        if self.tags.len() > usize::from(u16::MAX) {
            return Err(invalid(format!("{} tags exceed 65535", self.tags.len())));
        }
        for (k, v) in &self.tags {
            if k.len() > usize::from(u16::MAX) || v.len() > usize::from(u16::MAX) {
                return Err(invalid(format!("tag {k:?} exceeds 65535 bytes")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct StoreData {
    dim: usize,
    records: Vec<ImageRecord>,
    index: HashMap<String, usize>,
}

/// Mutable, single-writer handle over a set of records.
#[derive(Debug, Clone)]
pub struct Store {
    data: Arc<StoreData>,
}

impl Store {
    pub fn create(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::InvalidDimension(dim));
        }
        Ok(Self {
            data: Arc::new(StoreData {
                dim,
                records: Vec::new(),
                index: HashMap::new(),
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.data.dim
    }

    pub fn len(&self) -> usize {
        self.data.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.records.is_empty()
    }

    /// Appends `records` as one batch. Either every record is accepted or
    /// the store is left untouched.
    pub fn ingest(&mut self, records: Vec<ImageRecord>) -> Result<usize, StoreError> {
        let dim = self.data.dim;
        let mut batch_ids = HashSet::with_capacity(records.len());
        for r in &records {
            r.check_limits()?;
            if r.embedding.dim() != dim {
                return Err(StoreError::DimensionMismatch {
                    id: r.id.clone(),
                    expected: dim,
                    actual: r.embedding.dim(),
                });
            }
            if self.data.index.contains_key(&r.id) || !batch_ids.insert(r.id.as_str()) {
                return Err(StoreError::DuplicateId(r.id.clone()));
            }
        }
        let accepted = records.len();
        let data = Arc::make_mut(&mut self.data);
        data.records.reserve(accepted);
        data.index.reserve(accepted);
        for r in records {
            data.index.insert(r.id.clone(), data.records.len());
            data.records.push(r);
        }
        Ok(accepted)
    }

    /// Immutable point-in-time view.
    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            data: Arc::clone(&self.data),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        format::save(&self.data.records, self.data.dim, path.as_ref())
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let (dim, records) = format::open(path.as_ref())?;
        let mut store = Store::create(dim)?;
        store.ingest(records).map_err(|e| match e {
            e @ (StoreError::DuplicateId(_) | StoreError::InvalidRecord { .. }) => {
                StoreError::Corrupt(e.to_string())
            }
            other => other,
        })?;
        Ok(store)
    }
}

/// Immutable view of a store's records in insertion order.
#[derive(Debug, Clone)]
pub struct StoreSnapshot {
    data: Arc<StoreData>,
}

impl StoreSnapshot {
    pub fn dim(&self) -> usize {
        self.data.dim
    }

    pub fn len(&self) -> usize {
        self.data.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.records.is_empty()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.data.records
    }

    pub fn get_record(&self, id: &str) -> Result<&ImageRecord, StoreError> {
        self.position(id)
            .map(|i| &self.data.records[i])
            .ok_or_else(|| StoreError::NotFound(id.to_owned()))
    }

    /// Insertion index of `id`.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.data.index.get(id).copied()
    }

    /// Record-for-record equality with float payloads compared by bits.
    pub fn bit_eq(&self, other: &StoreSnapshot) -> bool {
        self.dim() == other.dim()
            && self.len() == other.len()
            && self
                .records()
                .iter()
                .zip(other.records())
                .all(|(a, b)| a.bit_eq(b))
    }
}
