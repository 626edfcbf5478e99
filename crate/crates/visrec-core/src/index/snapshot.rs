//! Index snapshot file: magic `VRIDX01`, a JSON header (dim, k, generation,
//! partitions), then per shard the id table, versions, the f32 row matrix
//! and the neighbor lists, all little-endian. Neighbor entries reference
//! rows of their own shard.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::AtomicU64;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{KnnIndex, NeighborEntry, Shard};
use crate::catalog::{ItemMetadata, PartitionKey};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 7] = b"VRIDX01";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    k: usize,
    generation: u64,
    partitions: Vec<PartitionHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionHeader {
    category_group: String,
    vertical: String,
    gender: String,
    items: usize,
}

impl KnnIndex {
    fn encode(&self, generation: u64) -> Vec<u8> {
        let header = Header {
            dim: self.dim,
            k: self.k,
            generation,
            partitions: self
                .shards
                .values()
                .map(|s| PartitionHeader {
                    category_group: s.key.0.category_group.clone(),
                    vertical: s.key.0.vertical.clone(),
                    gender: s.key.0.gender.clone(),
                    items: s.ids.len(),
                })
                .collect(),
        };
        let header_json = serde_json::to_string(&header).expect("header serializes");

        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(header_json.as_bytes());
        for shard in self.shards.values() {
            for (id, &version) in shard.ids.iter().zip(&shard.versions) {
                out.extend_from_slice(&(id.len() as u32).to_le_bytes());
                out.extend_from_slice(id.as_bytes());
                out.extend_from_slice(&version.to_le_bytes());
            }
            for &v in &shard.rows {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for list in &shard.neighbors {
                out.extend_from_slice(&(list.len() as u32).to_le_bytes());
                for e in list {
                    let row = shard
                        .position(&e.id)
                        .expect("neighbor id belongs to its shard") as u32;
                    out.extend_from_slice(&row.to_le_bytes());
                    out.extend_from_slice(&e.distance.to_le_bytes());
                }
            }
        }
        out
    }

    /// SHA-256 over the snapshot encoding with the generation zeroed, so
    /// delta-maintained and rebuilt indexes of identical content compare
    /// equal.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.encode(0));
        hasher.finalize().into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode(self.generation)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let err = |reason: &str| Error::Format {
            path: "<bytes>".into(),
            reason: reason.to_string(),
        };
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(err("unexpected end of file"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };

        if take(&mut pos, INDEX_MAGIC.len())? != INDEX_MAGIC {
            return Err(err("bad magic"));
        }
        let header_len =
            u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(&mut pos, header_len)?)?;
        if header.dim == 0 || header.k == 0 {
            return Err(err("zero dim or k in header"));
        }

        let mut shards = BTreeMap::new();
        for p in &header.partitions {
            let key = PartitionKey(ItemMetadata::new(
                p.category_group.clone(),
                p.vertical.clone(),
                p.gender.clone(),
            ));
            let n = p.items;
            let mut ids = Vec::with_capacity(n);
            let mut versions = Vec::with_capacity(n);
            for _ in 0..n {
                let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
                let id = std::str::from_utf8(take(&mut pos, len)?)
                    .map_err(|_| err("id is not utf-8"))?
                    .to_string();
                let version = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                ids.push(id);
                versions.push(version);
            }
            let mut rows = Vec::with_capacity(n * header.dim);
            for _ in 0..n * header.dim {
                rows.push(f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()));
            }
            let mut neighbors = Vec::with_capacity(n);
            for _ in 0..n {
                let count =
                    u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
                let mut list = Vec::with_capacity(count);
                for _ in 0..count {
                    let row =
                        u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
                    let distance = f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
                    let id = ids
                        .get(row)
                        .ok_or_else(|| err("neighbor row out of range"))?
                        .clone();
                    list.push(NeighborEntry { id, distance });
                }
                neighbors.push(list);
            }
            shards.insert(
                key.clone(),
                Shard {
                    key,
                    ids,
                    rows,
                    versions,
                    neighbors,
                },
            );
        }
        if pos != bytes.len() {
            return Err(err("trailing bytes"));
        }
        Ok(KnnIndex {
            dim: header.dim,
            k: header.k,
            generation: header.generation,
            shards,
            distance_evals: AtomicU64::new(0),
        })
    }
}
