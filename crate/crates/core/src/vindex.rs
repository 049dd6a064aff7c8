//! Exact flat vector index with cosine scoring and a checksummed file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! 0   magic      b"SPIDX\0\0\x01"
//! 8   version    u32
//! 12  dim        u32
//! 16  count      u64
//! 24  meta_off   u64
//! 32  vectors    count * dim * f32, entries in chunk_id order
//! meta_off       count * (u32 length + UTF-8 JSON metadata record)
//! end-4          CRC32 of every preceding byte
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;

pub const MAGIC: [u8; 8] = *b"SPIDX\0\0\x01";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate chunk_id {0:?}")]
    DuplicateId(String),
    #[error("index is frozen; rebuild to add entries")]
    Frozen,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("zero-norm vector for {0:?}")]
    ZeroNorm(String),
    #[error("refusing to save an empty index")]
    EmptyIndex,
    #[error("not an index file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    VersionMismatch(u32),
    #[error("index file truncated")]
    Truncated,
    #[error("index checksum mismatch")]
    Checksum,
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IndexError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryMetadata {
    pub paper_id: String,
    pub title: String,
    pub authors: Vec<String>,
    pub venue: Option<String>,
    pub year: Option<i32>,
    pub section_path: String,
    /// Chunk text, stored so search results can be rendered without the corpus.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: EmbeddingVector,
    pub metadata: EntryMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
    pub rank: usize,
    pub metadata: EntryMetadata,
}

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    chunk_id: String,
    #[serde(flatten)]
    metadata: EntryMetadata,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    norms: Vec<f64>,
    ids: HashMap<String, usize>,
    frozen: bool,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            norms: Vec::new(),
            ids: HashMap::new(),
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn get(&self, chunk_id: &str) -> Option<&IndexEntry> {
        self.ids.get(chunk_id).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn add(&mut self, entry: IndexEntry) -> Result<()> {
        if self.frozen {
            return Err(IndexError::Frozen);
        }
        if entry.vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: entry.vector.dim(),
            });
        }
        if self.ids.contains_key(&entry.chunk_id) {
            return Err(IndexError::DuplicateId(entry.chunk_id));
        }
        let norm = entry.vector.norm();
        if norm == 0.0 {
            return Err(IndexError::ZeroNorm(entry.chunk_id));
        }
        self.ids.insert(entry.chunk_id.clone(), self.entries.len());
        self.norms.push(norm);
        self.entries.push(entry);
        Ok(())
    }

    /// Ends the build phase; later `add` calls fail.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Exact top-k by cosine similarity. Ties are broken by ascending chunk_id.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let qn = query.norm();
        if qn == 0.0 {
            return Err(IndexError::ZeroNorm("<query>".into()));
        }
        let q = query.values();
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .zip(&self.norms)
            .enumerate()
            .map(|(i, (e, &n))| {
                let dot: f64 = q
                    .iter()
                    .zip(e.vector.values())
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                ((dot / (qn * n)).clamp(-1.0, 1.0), i)
            })
            .collect();

        let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0)
                .then_with(|| self.entries[a.1].chunk_id.cmp(&self.entries[b.1].chunk_id))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);

        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(r, (score, i))| SearchHit {
                chunk_id: self.entries[i].chunk_id.clone(),
                score,
                rank: r + 1,
                metadata: self.entries[i].metadata.clone(),
            })
            .collect())
    }

    /// Serializes the index in the documented binary layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.entries.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        let mut order: Vec<&IndexEntry> = self.entries.iter().collect();
        order.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));

        let count = order.len();
        let meta_off = HEADER_LEN + count * self.dim * 4;
        let mut out = Vec::with_capacity(meta_off + count * 256);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(count as u64).to_le_bytes());
        out.extend_from_slice(&(meta_off as u64).to_le_bytes());
        for e in &order {
            for v in e.vector.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for e in &order {
            let rec = MetaRecord {
                chunk_id: e.chunk_id.clone(),
                metadata: e.metadata.clone(),
            };
            let json = serde_json::to_vec(&rec).map_err(|e| IndexError::Corrupt(e.to_string()))?;
            out.extend_from_slice(&(json.len() as u32).to_le_bytes());
            out.extend_from_slice(&json);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses an index file image. The result is frozen.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
            return Err(IndexError::BadMagic);
        }
        if bytes.len() < HEADER_LEN + 4 {
            return Err(IndexError::Truncated);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(8);
        let dim = u32_at(12) as usize;
        let count = u64_at(16) as usize;
        let meta_off = u64_at(24) as usize;
        let expected_off = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| IndexError::Corrupt("header sizes overflow".into()))?;
        if meta_off != expected_off {
            return Err(IndexError::Corrupt(format!(
                "metadata offset {meta_off}, expected {expected_off}"
            )));
        }
        if bytes.len() < meta_off + 4 {
            return Err(IndexError::Truncated);
        }
        let body_end = bytes.len() - 4;
        if crc32fast::hash(&bytes[..body_end]) != u32_at(body_end) {
            return Err(IndexError::Checksum);
        }
        if version != FORMAT_VERSION {
            return Err(IndexError::VersionMismatch(version));
        }

        let mut index = VectorIndex::new(dim);
        let mut pos = meta_off;
        for i in 0..count {
            if pos + 4 > body_end {
                return Err(IndexError::Truncated);
            }
            let len = u32_at(pos) as usize;
            pos += 4;
            if pos + len > body_end {
                return Err(IndexError::Truncated);
            }
            let rec: MetaRecord = serde_json::from_slice(&bytes[pos..pos + len])
                .map_err(|e| IndexError::Corrupt(e.to_string()))?;
            pos += len;
            let start = HEADER_LEN + i * dim * 4;
            let values: Vec<f32> = bytes[start..start + dim * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let vector =
                EmbeddingVector::new(values).map_err(|e| IndexError::Corrupt(e.to_string()))?;
            index.add(IndexEntry {
                chunk_id: rec.chunk_id,
                vector,
                metadata: rec.metadata,
            })?;
        }
        if pos != body_end {
            return Err(IndexError::Corrupt("trailing bytes after metadata".into()));
        }
        index.freeze();
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
