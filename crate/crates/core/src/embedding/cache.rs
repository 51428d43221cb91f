//! Persistent content-addressed embedding cache.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! file    := MAGIC record* footer?
//! record  := 'R' key[32] dims:u32 value:f32{dims} crc32:u32
//! footer  := 'I' count:u32 (key[32] offset:u64){count} footer_offset:u64 INDEX_MAGIC
//! ```
//!
//! The crc covers `key || dims || values`. Records are only ever appended;
//! the footer is dropped before an append and rewritten on [`EmbeddingCache::flush`].
//! A file without a valid footer is rebuilt by scanning records, and a torn
//! trailing record is discarded.
//!
//! One process may write a cache file at a time. Within a process the cache
//! is shared freely: lookups take a read lock, appends are serialized.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use sha2::{Digest, Sha256};

use crate::textmetrics::nfc;

const MAGIC: &[u8; 8] = b"XLEMB001";
const INDEX_MAGIC: &[u8; 8] = b"XLEMBIDX";
const RECORD_TAG: u8 = b'R';
const INDEX_TAG: u8 = b'I';
const KEY_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{} is not an embedding cache file", path.display())]
    BadMagic { path: PathBuf },
    #[error("corrupt cache record for key {key} at offset {offset}")]
    Corrupt { key: CacheKey, offset: u64 },
    #[error("invalid embedding vector: {0}")]
    InvalidVector(String),
}

/// SHA-256 digest of the NFC-normalized UTF-8 bytes of a text.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey([u8; KEY_LEN]);

impl CacheKey {
    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CacheKey({})", &self.to_hex()[..16])
    }
}

pub fn cache_key(text: &str) -> CacheKey {
    CacheKey(Sha256::digest(nfc(text).as_bytes()).into())
}

/// A sentence embedding, stored exactly as the provider returned it.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, CacheError> {
        if values.is_empty() {
            return Err(CacheError::InvalidVector("zero dimensions".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CacheError::InvalidVector(format!(
                "non-finite component at index {i}"
            )));
        }
        Ok(Self { values })
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    offset: u64,
    dims: u32,
}

struct Store {
    path: PathBuf,
    file: File,
    /// End of the last complete record.
    data_end: u64,
    /// Whether the file currently ends in a valid footer at `data_end`.
    has_footer: bool,
}

impl Store {
    fn io(&self, source: io::Error) -> CacheError {
        CacheError::Io {
            path: self.path.clone(),
            source,
        }
    }

    fn read_record(&mut self, key: CacheKey, slot: Slot) -> Result<EmbeddingVector, CacheError> {
        let len = 1 + KEY_LEN + 4 + slot.dims as usize * 4 + 4;
        let mut buf = vec![0u8; len];
        self.file
            .seek(SeekFrom::Start(slot.offset))
            .and_then(|_| self.file.read_exact(&mut buf))
            .map_err(|e| self.io(e))?;
        match parse_record(&buf) {
            Some((k, values, _)) if k == key => {
                EmbeddingVector::new(values).map_err(|_| CacheError::Corrupt {
                    key,
                    offset: slot.offset,
                })
            }
            _ => Err(CacheError::Corrupt {
                key,
                offset: slot.offset,
            }),
        }
    }

    fn append(&mut self, key: CacheKey, vector: &EmbeddingVector) -> Result<Slot, CacheError> {
        if self.has_footer {
            self.file.set_len(self.data_end).map_err(|e| self.io(e))?;
            self.has_footer = false;
        }
        let bytes = encode_record(key, vector.as_slice());
        let offset = self.data_end;
        self.file
            .seek(SeekFrom::Start(offset))
            .and_then(|_| self.file.write_all(&bytes))
            .and_then(|_| self.file.flush())
            .map_err(|e| self.io(e))?;
        self.data_end += bytes.len() as u64;
        Ok(Slot {
            offset,
            dims: vector.dims() as u32,
        })
    }

    fn write_footer(&mut self, index: &HashMap<CacheKey, Slot>) -> Result<(), CacheError> {
        if self.has_footer {
            return Ok(());
        }
        let mut entries: Vec<(&CacheKey, &Slot)> = index.iter().collect();
        entries.sort_by_key(|(_, slot)| slot.offset);
        let mut buf = Vec::with_capacity(1 + 4 + entries.len() * (KEY_LEN + 8) + 16);
        buf.push(INDEX_TAG);
        buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (key, slot) in entries {
            buf.extend_from_slice(key.as_bytes());
            buf.extend_from_slice(&slot.offset.to_le_bytes());
        }
        buf.extend_from_slice(&self.data_end.to_le_bytes());
        buf.extend_from_slice(INDEX_MAGIC);
        let end = self.data_end;
        self.file
            .set_len(end)
            .and_then(|_| self.file.seek(SeekFrom::Start(end)))
            .and_then(|_| self.file.write_all(&buf))
            .and_then(|_| self.file.sync_data())
            .map_err(|e| self.io(e))?;
        self.has_footer = true;
        Ok(())
    }
}

fn encode_record(key: CacheKey, values: &[f32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(1 + KEY_LEN + 4 + values.len() * 4 + 4);
    buf.push(RECORD_TAG);
    buf.extend_from_slice(key.as_bytes());
    buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf[1..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Parses one record from the start of `buf`, returning the key, values and
/// byte length. `None` for a torn or corrupt record.
fn parse_record(buf: &[u8]) -> Option<(CacheKey, Vec<f32>, usize)> {
    if buf.first() != Some(&RECORD_TAG) || buf.len() < 1 + KEY_LEN + 4 {
        return None;
    }
    let key = CacheKey(buf[1..1 + KEY_LEN].try_into().ok()?);
    let dims = u32::from_le_bytes(buf[1 + KEY_LEN..1 + KEY_LEN + 4].try_into().ok()?) as usize;
    let body_end = 1 + KEY_LEN + 4 + dims.checked_mul(4)?;
    let total = body_end + 4;
    if buf.len() < total || dims == 0 {
        return None;
    }
    let crc = u32::from_le_bytes(buf[body_end..total].try_into().ok()?);
    if crc32fast::hash(&buf[1..body_end]) != crc {
        return None;
    }
    let values = buf[1 + KEY_LEN + 4..body_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Some((key, values, total))
}

/// Reads the footer index if the file ends with a valid one.
fn read_footer(bytes: &[u8]) -> Option<(HashMap<CacheKey, Slot>, u64)> {
    if bytes.len() < MAGIC.len() + 16 || &bytes[bytes.len() - 8..] != INDEX_MAGIC {
        return None;
    }
    let off_pos = bytes.len() - 16;
    let footer_offset = u64::from_le_bytes(bytes[off_pos..off_pos + 8].try_into().ok()?);
    let start = usize::try_from(footer_offset).ok()?;
    if start < MAGIC.len() || start + 5 > off_pos || bytes[start] != INDEX_TAG {
        return None;
    }
    let count = u32::from_le_bytes(bytes[start + 1..start + 5].try_into().ok()?) as usize;
    let entries = &bytes[start + 5..off_pos];
    if entries.len() != count.checked_mul(KEY_LEN + 8)? {
        return None;
    }
    let mut index = HashMap::with_capacity(count);
    for chunk in entries.chunks_exact(KEY_LEN + 8) {
        let key = CacheKey(chunk[..KEY_LEN].try_into().ok()?);
        let offset = u64::from_le_bytes(chunk[KEY_LEN..].try_into().ok()?);
        let pos = usize::try_from(offset).ok()?;
        let header_end = pos + 1 + KEY_LEN + 4;
        if header_end > start || bytes[pos] != RECORD_TAG || bytes[pos + 1..pos + 1 + KEY_LEN] != key.0 {
            return None;
        }
        let dims = u32::from_le_bytes(bytes[pos + 1 + KEY_LEN..header_end].try_into().ok()?);
        index.insert(key, Slot { offset, dims });
    }
    Some((index, footer_offset))
}

/// Rebuilds the index by scanning records from the start of the data area.
fn scan(bytes: &[u8]) -> (HashMap<CacheKey, Slot>, u64) {
    let mut index = HashMap::new();
    let mut pos = MAGIC.len();
    while pos < bytes.len() {
        match parse_record(&bytes[pos..]) {
            Some((key, values, len)) => {
                index.entry(key).or_insert(Slot {
                    offset: pos as u64,
                    dims: values.len() as u32,
                });
                pos += len;
            }
            None => break,
        }
    }
    (index, pos as u64)
}

/// Embedding cache keyed by [`CacheKey`], optionally backed by a file.
pub struct EmbeddingCache {
    index: RwLock<HashMap<CacheKey, Slot>>,
    memo: RwLock<HashMap<CacheKey, Arc<EmbeddingVector>>>,
    store: Option<Mutex<Store>>,
}

impl fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingCache")
            .field("entries", &self.len())
            .field("persistent", &self.store.is_some())
            .finish()
    }
}

impl EmbeddingCache {
    /// A cache that lives only as long as this value.
    pub fn in_memory() -> Self {
        Self {
            index: RwLock::new(HashMap::new()),
            memo: RwLock::new(HashMap::new()),
            store: None,
        }
    }

    /// Opens (or creates) a cache file. Uses the footer index when present,
    /// otherwise rebuilds it with a full scan and drops any torn tail.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_owned();
        let io = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)
            .map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;

        let (index, data_end, has_footer) = if bytes.is_empty() {
            file.write_all(MAGIC).and_then(|_| file.flush()).map_err(io)?;
            (HashMap::new(), MAGIC.len() as u64, false)
        } else if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CacheError::BadMagic { path });
        } else if let Some((index, end)) = read_footer(&bytes) {
            (index, end, true)
        } else {
            let (index, end) = scan(&bytes);
            if end < bytes.len() as u64 {
                log::warn!(
                    "{}: discarding {} trailing bytes after last complete record",
                    path.display(),
                    bytes.len() as u64 - end
                );
                file.set_len(end).map_err(io)?;
            }
            (index, end, false)
        };

        Ok(Self {
            index: RwLock::new(index),
            memo: RwLock::new(HashMap::new()),
            store: Some(Mutex::new(Store {
                path,
                file,
                data_end,
                has_footer,
            })),
        })
    }

    pub fn len(&self) -> usize {
        if self.store.is_some() {
            self.index.read().unwrap().len()
        } else {
            self.memo.read().unwrap().len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.memo.read().unwrap().contains_key(key) || self.index.read().unwrap().contains_key(key)
    }

    pub fn keys(&self) -> Vec<CacheKey> {
        let mut keys: Vec<CacheKey> = if self.store.is_some() {
            self.index.read().unwrap().keys().copied().collect()
        } else {
            self.memo.read().unwrap().keys().copied().collect()
        };
        keys.sort();
        keys
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<Arc<EmbeddingVector>>, CacheError> {
        if let Some(v) = self.memo.read().unwrap().get(key) {
            return Ok(Some(Arc::clone(v)));
        }
        let Some(slot) = self.index.read().unwrap().get(key).copied() else {
            return Ok(None);
        };
        let Some(store) = &self.store else {
            return Ok(None);
        };
        let vector = Arc::new(store.lock().unwrap().read_record(*key, slot)?);
        self.memo
            .write()
            .unwrap()
            .insert(*key, Arc::clone(&vector));
        Ok(Some(vector))
    }

    /// Stores a vector. An existing entry for the same key is kept.
    pub fn insert(&self, key: CacheKey, vector: EmbeddingVector) -> Result<Arc<EmbeddingVector>, CacheError> {
        if let Some(existing) = self.get(&key)? {
            return Ok(existing);
        }
        let vector = Arc::new(vector);
        if let Some(store) = &self.store {
            let mut store = store.lock().unwrap();
            // re-check under the writer lock
            if self.index.read().unwrap().contains_key(&key) {
                drop(store);
                return Ok(self.get(&key)?.expect("indexed key is readable"));
            }
            let slot = store.append(key, &vector)?;
            self.index.write().unwrap().insert(key, slot);
        }
        self.memo
            .write()
            .unwrap()
            .insert(key, Arc::clone(&vector));
        Ok(vector)
    }

    /// Writes the index footer. Called automatically on drop.
    pub fn flush(&self) -> Result<(), CacheError> {
        if let Some(store) = &self.store {
            let mut store = store.lock().unwrap();
            let index = self.index.read().unwrap();
            store.write_footer(&index)?;
        }
        Ok(())
    }
}

impl Drop for EmbeddingCache {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            log::warn!("failed to write embedding cache index: {e}");
        }
    }
}
