//! Persistent feature store: an append-only, length-prefixed binary log.
//!
//! Layout: magic `VRFS001`, then records. Each record is a u32 LE payload
//! length followed by the payload: a kind byte (0 put, 1 tombstone,
//! 2 watermark), the event seq (u64 LE), and for puts/tombstones the id,
//! version and (for puts) metadata JSON plus the f32 embedding. The latest
//! record per id wins; replaying the log from empty reproduces the state
//! exactly, and a torn final record is ignored on load.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::catalog::ItemMetadata;
use crate::embedding::Embedding;
use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 7] = b"VRFS001";

const KIND_PUT: u8 = 0;
const KIND_TOMBSTONE: u8 = 1;
const KIND_WATERMARK: u8 = 2;

/// Latest live record of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredItem {
    pub id: String,
    pub embedding: Embedding,
    pub metadata: ItemMetadata,
    /// Version of the embedding: the event seq that produced it.
    pub version: u64,
}

/// What applying an event did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Applied,
    /// Sequence number at or below the watermark: replay, skipped.
    SkippedReplay,
}

enum Record {
    Put(StoredItem, u64),
    Tombstone { id: String, seq: u64 },
    Watermark { seq: u64 },
}

/// Append-only feature store with an in-memory view of the latest state.
pub struct FeatureStore {
    path: PathBuf,
    file: fs::File,
    state: BTreeMap<String, StoredItem>,
    /// Highest event seq applied (or carried by a compaction watermark).
    last_seq: u64,
}

impl FeatureStore {
    /// Opens or creates the store, replaying any existing log. A torn final
    /// record (crash mid-append) is dropped.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let exists = path.exists();
        let mut state = BTreeMap::new();
        let mut last_seq = 0u64;
        if exists {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            for record in decode_records(&path, &bytes)? {
                match record {
                    Record::Put(item, seq) => {
                        last_seq = last_seq.max(seq);
                        state.insert(item.id.clone(), item);
                    }
                    Record::Tombstone { id, seq } => {
                        last_seq = last_seq.max(seq);
                        state.remove(&id);
                    }
                    Record::Watermark { seq } => {
                        last_seq = last_seq.max(seq);
                    }
                }
            }
        }
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if !exists {
            file.write_all(STORE_MAGIC).map_err(|e| Error::io(&path, e))?;
        }
        Ok(FeatureStore {
            path,
            file,
            state,
            last_seq,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Latest-wins visible state: live items only.
    pub fn visible(&self) -> &BTreeMap<String, StoredItem> {
        &self.state
    }

    pub fn get(&self, id: &str) -> Option<&StoredItem> {
        self.state.get(id)
    }

    /// Appends a put; `seq` at or below the watermark is skipped (replay).
    pub fn put(
        &mut self,
        seq: u64,
        id: &str,
        embedding: Embedding,
        metadata: ItemMetadata,
    ) -> Result<Applied> {
        if seq <= self.last_seq {
            return Ok(Applied::SkippedReplay);
        }
        let item = StoredItem {
            id: id.to_string(),
            embedding,
            metadata,
            version: seq,
        };
        self.append(&encode_put(&item, seq))?;
        self.state.insert(item.id.clone(), item);
        self.last_seq = seq;
        Ok(Applied::Applied)
    }

    /// Appends a tombstone; replayed seqs are skipped. Deleting an id that
    /// is not live still records the tombstone (the event consumed).
    pub fn delete(&mut self, seq: u64, id: &str) -> Result<Applied> {
        if seq <= self.last_seq {
            return Ok(Applied::SkippedReplay);
        }
        self.append(&encode_tombstone(id, seq))?;
        self.state.remove(id);
        self.last_seq = seq;
        Ok(Applied::Applied)
    }

    fn append(&mut self, payload: &[u8]) -> Result<()> {
        let mut buf = Vec::with_capacity(4 + payload.len());
        buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        buf.extend_from_slice(payload);
        self.file
            .write_all(&buf)
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    /// Rewrites the log to one record per live id (plus a watermark), in
    /// ascending version order. The visible state is unchanged.
    pub fn compact(&mut self) -> Result<()> {
        let tmp = self.path.with_extension("compact.tmp");
        {
            let mut out = Vec::new();
            out.extend_from_slice(STORE_MAGIC);
            let wm = encode_watermark(self.last_seq);
            out.extend_from_slice(&(wm.len() as u32).to_le_bytes());
            out.extend_from_slice(&wm);
            let mut items: Vec<&StoredItem> = self.state.values().collect();
            items.sort_by_key(|it| (it.version, it.id.clone()));
            for item in items {
                let rec = encode_put(item, item.version);
                out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
                out.extend_from_slice(&rec);
            }
            fs::write(&tmp, out).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        self.file = fs::OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

fn encode_put(item: &StoredItem, seq: u64) -> Vec<u8> {
    let meta_json = serde_json::to_vec(&item.metadata).expect("metadata serializes");
    let mut out = Vec::new();
    out.push(KIND_PUT);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&(item.id.len() as u32).to_le_bytes());
    out.extend_from_slice(item.id.as_bytes());
    out.extend_from_slice(&item.version.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&(item.embedding.dim() as u32).to_le_bytes());
    for &v in item.embedding.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn encode_tombstone(id: &str, seq: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(KIND_TOMBSTONE);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    out
}

fn encode_watermark(seq: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(KIND_WATERMARK);
    out.extend_from_slice(&seq.to_le_bytes());
    out
}

fn decode_records(path: &Path, bytes: &[u8]) -> Result<Vec<Record>> {
    let err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < STORE_MAGIC.len() || &bytes[..STORE_MAGIC.len()] != STORE_MAGIC {
        return Err(err("bad magic".into()));
    }
    let mut records = Vec::new();
    let mut pos = STORE_MAGIC.len();
    while pos < bytes.len() {
        if pos + 4 > bytes.len() {
            break; // torn length prefix
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        if pos + 4 + len > bytes.len() {
            break; // torn payload
        }
        let payload = &bytes[pos + 4..pos + 4 + len];
        pos += 4 + len;
        records.push(decode_record(path, payload)?);
    }
    Ok(records)
}

fn decode_record(path: &Path, payload: &[u8]) -> Result<Record> {
    let err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > payload.len() {
            return Err(err(format!("record truncated at byte {}", *pos)));
        }
        let s = &payload[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let kind = take(&mut pos, 1)?[0];
    let seq = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    match kind {
        KIND_WATERMARK => Ok(Record::Watermark { seq }),
        KIND_TOMBSTONE => {
            let id_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(take(&mut pos, id_len)?)
                .map_err(|_| err("id is not utf-8".into()))?
                .to_string();
            Ok(Record::Tombstone { id, seq })
        }
        KIND_PUT => {
            let id_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(take(&mut pos, id_len)?)
                .map_err(|_| err("id is not utf-8".into()))?
                .to_string();
            let version = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let meta_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let metadata: ItemMetadata = serde_json::from_slice(take(&mut pos, meta_len)?)?;
            let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()));
            }
            Ok(Record::Put(
                StoredItem {
                    id,
                    embedding: Embedding::new(values)?,
                    metadata,
                    version,
                },
                seq,
            ))
        }
        other => Err(err(format!("unknown record kind {other}"))),
    }
}
