//! Exact, shardable k-nearest-neighbor index with metadata pruning.
//!
//! Items are partitioned by (category_group, vertical, gender); neighbor
//! lists never cross partitions. Maintenance is incremental but exactly
//! rebuild-equivalent: `apply_delta` produces the same lists, distances and
//! order as `build` over the post-delta item set, bit for bit. There is no
//! approximate structure anywhere.

mod snapshot;

pub use snapshot::INDEX_MAGIC;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::catalog::{ItemMetadata, PartitionKey};
use crate::embedding::euclidean_distance_f32;
use crate::error::{Error, Result};

/// One indexed catalog item.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedItem {
    pub id: String,
    pub embedding: Vec<f32>,
    pub metadata: ItemMetadata,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NeighborEntry {
    pub id: String,
    pub distance: f32,
}

/// Ranked top-k neighbors of one owner (or of a live query), ascending by
/// (distance, id).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NeighborList {
    /// `None` for live queries that are not themselves indexed items.
    pub owner: Option<String>,
    pub entries: Vec<NeighborEntry>,
}

/// Metadata filter over partition keys; unset attributes match anything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filter {
    pub category_group: Option<String>,
    pub vertical: Option<String>,
    pub gender: Option<String>,
}

impl Filter {
    pub fn matches(&self, key: &PartitionKey) -> bool {
        let ok = |want: &Option<String>, have: &str| {
            want.as_deref().is_none_or(|w| w == have)
        };
        ok(&self.category_group, &key.0.category_group)
            && ok(&self.vertical, &key.0.vertical)
            && ok(&self.gender, &key.0.gender)
    }

    /// Parses repeated `key=value` CLI arguments.
    pub fn parse(args: &[String]) -> Result<Self> {
        let mut f = Filter::default();
        for arg in args {
            let (key, value) = arg
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad filter {arg:?}, want key=value")))?;
            match key {
                "category_group" => f.category_group = Some(value.to_string()),
                "vertical" => f.vertical = Some(value.to_string()),
                "gender" => f.gender = Some(value.to_string()),
                other => {
                    return Err(Error::Config(format!("unknown filter attribute {other:?}")))
                }
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Shard {
    pub key: PartitionKey,
    /// Ascending ids; rows, versions and neighbor lists are row-aligned.
    pub ids: Vec<String>,
    pub rows: Vec<f32>,
    pub versions: Vec<u64>,
    pub neighbors: Vec<Vec<NeighborEntry>>,
}

impl Shard {
    fn row(&self, i: usize, dim: usize) -> &[f32] {
        &self.rows[i * dim..(i + 1) * dim]
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|x| x.as_str().cmp(id)).ok()
    }
}

/// Exact k-NN index over embeddings. A built index is an immutable
/// generation: queries never mutate it, and maintenance produces a fresh
/// generation via [`KnnIndex::apply_delta`].
#[derive(Debug)]
pub struct KnnIndex {
    dim: usize,
    k: usize,
    generation: u64,
    pub(crate) shards: BTreeMap<PartitionKey, Shard>,
    /// Total Euclidean distance evaluations, for cost instrumentation.
    distance_evals: AtomicU64,
}

impl Clone for KnnIndex {
    fn clone(&self) -> Self {
        KnnIndex {
            dim: self.dim,
            k: self.k,
            generation: self.generation,
            shards: self.shards.clone(),
            distance_evals: AtomicU64::new(self.distance_evals.load(Ordering::Relaxed)),
        }
    }
}

/// Per-call query statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryStats {
    pub distance_evals: u64,
    pub items_scanned: u64,
}

/// Ordering used everywhere: ascending stored distance, then ascending id.
#[inline]
fn entry_order(a_dist: f32, a_id: &str, b_dist: f32, b_id: &str) -> std::cmp::Ordering {
    a_dist.total_cmp(&b_dist).then_with(|| a_id.cmp(b_id))
}

impl KnnIndex {
    /// An empty generation, the starting point for ingestion-driven deltas.
    pub fn empty(dim: usize, k: usize) -> Result<Self> {
        if dim == 0 || k == 0 {
            return Err(Error::Config("dim and k must be positive".into()));
        }
        Ok(KnnIndex {
            dim,
            k,
            generation: 0,
            shards: BTreeMap::new(),
            distance_evals: AtomicU64::new(0),
        })
    }

    /// Full build: exact top-k within each partition for every item.
    pub fn build(items: Vec<IndexedItem>, k: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Index("cannot build from zero items".into()));
        }
        let dim = items[0].embedding.len();
        let mut index = Self::empty(dim, k)?;
        index.insert_items(items)?;
        index.recompute_all_lists();
        index.generation = 1;
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.shards.values().map(|s| s.ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: &str) -> bool {
        self.shards.values().any(|s| s.position(id).is_some())
    }

    pub fn distance_evals(&self) -> u64 {
        self.distance_evals.load(Ordering::Relaxed)
    }

    /// Item count per partition, for stats endpoints.
    pub fn partition_sizes(&self) -> BTreeMap<String, usize> {
        self.shards
            .iter()
            .map(|(key, s)| (key.to_string(), s.ids.len()))
            .collect()
    }

    /// (id, version, metadata) of every indexed item; the refresh diff input.
    pub fn item_versions(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for shard in self.shards.values() {
            for (id, &v) in shard.ids.iter().zip(&shard.versions) {
                out.insert(id.clone(), v);
            }
        }
        out
    }

    /// Embedding and metadata of an indexed item.
    pub fn item(&self, id: &str) -> Option<IndexedItem> {
        for shard in self.shards.values() {
            if let Some(i) = shard.position(id) {
                return Some(IndexedItem {
                    id: shard.ids[i].clone(),
                    embedding: shard.row(i, self.dim).to_vec(),
                    metadata: shard.key.0.clone(),
                    version: shard.versions[i],
                });
            }
        }
        None
    }

    /// The precomputed neighbor list of an indexed item (the serving cache).
    pub fn neighbor_list(&self, id: &str) -> Option<NeighborList> {
        for shard in self.shards.values() {
            if let Some(i) = shard.position(id) {
                return Some(NeighborList {
                    owner: Some(id.to_string()),
                    entries: shard.neighbors[i].clone(),
                });
            }
        }
        None
    }

    /// Metadata of an indexed item's partition.
    pub fn metadata_of(&self, id: &str) -> Option<&ItemMetadata> {
        self.shards
            .values()
            .find(|s| s.position(id).is_some())
            .map(|s| &s.key.0)
    }

    fn count_evals(&self, n: u64) {
        self.distance_evals.fetch_add(n, Ordering::Relaxed);
    }

    // -- build internals ----------------------------------------------------

    fn insert_items(&mut self, items: Vec<IndexedItem>) -> Result<()> {
        let mut seen: HashSet<String> = HashSet::with_capacity(items.len());
        for item in &items {
            if item.embedding.len() != self.dim {
                return Err(Error::DimMismatch(format!(
                    "item {} has dim {}, index dim {}",
                    item.id,
                    item.embedding.len(),
                    self.dim
                )));
            }
            if !seen.insert(item.id.clone()) || self.contains(&item.id) {
                return Err(Error::Index(format!("duplicate id {}", item.id)));
            }
        }
        for item in items {
            let key = item.metadata.partition_key();
            let shard = self.shards.entry(key.clone()).or_insert_with(|| Shard {
                key,
                ids: Vec::new(),
                rows: Vec::new(),
                versions: Vec::new(),
                neighbors: Vec::new(),
            });
            let pos = shard
                .ids
                .binary_search(&item.id)
                .expect_err("fresh id checked above");
            shard.ids.insert(pos, item.id);
            shard.versions.insert(pos, item.version);
            shard.neighbors.insert(pos, Vec::new());
            let at = pos * self.dim;
            shard.rows.splice(at..at, item.embedding);
        }
        Ok(())
    }

    /// Exact top-k list for row `i` by scanning the whole shard.
    fn scan_list(&self, shard: &Shard, i: usize) -> Vec<NeighborEntry> {
        let dim = self.dim;
        let own = shard.row(i, dim);
        let mut scored: Vec<(f32, usize)> = Vec::with_capacity(shard.ids.len() - 1);
        for j in 0..shard.ids.len() {
            if j != i {
                scored.push((euclidean_distance_f32(own, shard.row(j, dim)), j));
            }
        }
        scored.sort_by(|a, b| entry_order(a.0, &shard.ids[a.1], b.0, &shard.ids[b.1]));
        scored.truncate(self.k);
        scored
            .into_iter()
            .map(|(distance, j)| NeighborEntry {
                id: shard.ids[j].clone(),
                distance,
            })
            .collect()
    }

    fn recompute_all_lists(&mut self) {
        let dim = self.dim;
        let k = self.k;
        let mut evals = 0u64;
        // Split borrows: scan with an immutable view, assign after.
        let shard_keys: Vec<PartitionKey> = self.shards.keys().cloned().collect();
        for key in shard_keys {
            let shard = &self.shards[&key];
            let n = shard.ids.len();
            evals += (n as u64) * (n as u64 - 1);
            let lists: Vec<Vec<NeighborEntry>> = (0..n)
                .into_par_iter()
                .map(|i| scan_list_static(shard, i, dim, k))
                .collect();
            self.shards.get_mut(&key).unwrap().neighbors = lists;
        }
        self.count_evals(evals);
    }

    // -- query ----------------------------------------------------------------

    /// Exact top-k over the filter-selected shards. An empty filter result
    /// yields an empty list, not an error.
    pub fn query(&self, embedding: &[f32], k: usize, filter: &Filter) -> Result<NeighborList> {
        Ok(self.query_with_stats(embedding, k, filter)?.0)
    }

    pub fn query_with_stats(
        &self,
        embedding: &[f32],
        k: usize,
        filter: &Filter,
    ) -> Result<(NeighborList, QueryStats)> {
        if embedding.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "query dim {} vs index dim {}",
                embedding.len(),
                self.dim
            )));
        }
        let mut scored: Vec<(f32, &str)> = Vec::new();
        let mut scanned = 0u64;
        for shard in self.shards.values() {
            if !filter.matches(&shard.key) {
                continue;
            }
            for j in 0..shard.ids.len() {
                scored.push((
                    euclidean_distance_f32(embedding, shard.row(j, self.dim)),
                    shard.ids[j].as_str(),
                ));
                scanned += 1;
            }
        }
        self.count_evals(scanned);
        scored.sort_by(|a, b| entry_order(a.0, a.1, b.0, b.1));
        scored.truncate(k);
        Ok((
            NeighborList {
                owner: None,
                entries: scored
                    .into_iter()
                    .map(|(distance, id)| NeighborEntry {
                        id: id.to_string(),
                        distance,
                    })
                    .collect(),
            },
            QueryStats {
                distance_evals: scanned,
                items_scanned: scanned,
            },
        ))
    }

    // -- incremental maintenance ----------------------------------------------

    /// Produces the next generation with `added` inserted and `removed`
    /// dropped. The result is exactly equal to a fresh build over the
    /// post-delta items; only added items get full scans, existing lists take
    /// merge insertions, and lists that lost a removed neighbor are re-scanned.
    ///
    /// An id present in both `removed` and `added` is an update.
    pub fn apply_delta(&self, added: Vec<IndexedItem>, removed: &[String]) -> Result<KnnIndex> {
        let mut next = self.clone();
        next.generation = self.generation + 1;

        // Validate removals up front.
        let mut removed_set: HashSet<&str> = HashSet::with_capacity(removed.len());
        for id in removed {
            if !next.contains(id) {
                return Err(Error::UnknownId(id.clone()));
            }
            if !removed_set.insert(id.as_str()) {
                return Err(Error::Index(format!("duplicate removed id {id}")));
            }
        }

        // Per-shard bookkeeping of owners needing a full re-scan.
        let mut repair: HashMap<PartitionKey, HashSet<String>> = HashMap::new();

        // Drop removed rows, marking surviving owners whose lists referenced
        // them.
        let mut emptied: Vec<PartitionKey> = Vec::new();
        for (key, shard) in next.shards.iter_mut() {
            let hit: Vec<usize> = shard
                .ids
                .iter()
                .enumerate()
                .filter(|(_, id)| removed_set.contains(id.as_str()))
                .map(|(i, _)| i)
                .collect();
            if hit.is_empty() {
                continue;
            }
            let gone: HashSet<&str> = hit.iter().map(|&i| shard.ids[i].as_str()).collect();
            let mut needs_repair = HashSet::new();
            for (i, list) in shard.neighbors.iter().enumerate() {
                if gone.contains(shard.ids[i].as_str()) {
                    continue;
                }
                if list.iter().any(|e| gone.contains(e.id.as_str())) {
                    needs_repair.insert(shard.ids[i].clone());
                }
            }
            repair.insert(key.clone(), needs_repair);

            let dim = self.dim;
            for &i in hit.iter().rev() {
                shard.ids.remove(i);
                shard.versions.remove(i);
                shard.neighbors.remove(i);
                shard.rows.drain(i * dim..(i + 1) * dim);
            }
            if shard.ids.is_empty() {
                emptied.push(key.clone());
            }
        }
        for key in emptied {
            next.shards.remove(&key);
            repair.remove(&key);
        }

        // Insert added rows (freshness is checked against the post-removal
        // state, so remove+add of one id is an update).
        let added_ids: HashSet<String> = added.iter().map(|a| a.id.clone()).collect();
        let touched_keys: BTreeSet<PartitionKey> =
            added.iter().map(|a| a.metadata.partition_key()).collect();
        next.insert_items(added)?;

        // Maintain lists shard by shard.
        let dim = next.dim;
        let k = next.k;
        let mut evals = 0u64;
        let all_keys: Vec<PartitionKey> = next
            .shards
            .keys()
            .filter(|key| repair.contains_key(*key) || touched_keys.contains(*key))
            .cloned()
            .collect();
        for key in all_keys {
            let shard = &next.shards[&key];
            let n = shard.ids.len();
            let empty = HashSet::new();
            let repair_ids = repair.get(&key).unwrap_or(&empty);
            let added_rows: Vec<usize> = (0..n)
                .filter(|&i| added_ids.contains(shard.ids[i].as_str()))
                .collect();

            let lists: Vec<Option<Vec<NeighborEntry>>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let id = shard.ids[i].as_str();
                    if added_ids.contains(id) || repair_ids.contains(id) {
                        // Full exact scan for new items and repaired owners.
                        Some(scan_list_static(shard, i, dim, k))
                    } else if added_rows.is_empty() {
                        None
                    } else {
                        // Merge newly added items into the existing list.
                        let mut list = shard.neighbors[i].clone();
                        let own = shard.row(i, dim);
                        for &j in &added_rows {
                            let d = euclidean_distance_f32(own, shard.row(j, dim));
                            let candidate_id = shard.ids[j].as_str();
                            let pos = list
                                .partition_point(|e| {
                                    entry_order(e.distance, &e.id, d, candidate_id)
                                        == std::cmp::Ordering::Less
                                });
                            if pos < k {
                                list.insert(
                                    pos,
                                    NeighborEntry {
                                        id: candidate_id.to_string(),
                                        distance: d,
                                    },
                                );
                                list.truncate(k);
                            }
                        }
                        Some(list)
                    }
                })
                .collect();

            // Account distance evaluations: full scans cost n-1 each, merges
            // cost one per added row.
            let full_scans = (0..n)
                .filter(|&i| {
                    added_ids.contains(shard.ids[i].as_str())
                        || repair_ids.contains(shard.ids[i].as_str())
                })
                .count() as u64;
            let merges = n as u64 - full_scans;
            evals += full_scans * (n as u64 - 1)
                + if added_rows.is_empty() {
                    0
                } else {
                    merges * added_rows.len() as u64
                };

            let shard = next.shards.get_mut(&key).unwrap();
            for (i, maybe) in lists.into_iter().enumerate() {
                if let Some(list) = maybe {
                    shard.neighbors[i] = list;
                }
            }
        }
        next.count_evals(evals);
        Ok(next)
    }

    // -- near-duplicate detection ----------------------------------------------

    /// All unordered same-partition pairs with distance <= tau, derived from
    /// the maintained neighbor lists. Complete as long as every item has
    /// fewer than k duplicates.
    pub fn near_duplicates(&self, tau: f32) -> Result<Vec<(String, String)>> {
        if tau < 0.0 {
            return Err(Error::Config(format!("negative threshold {tau}")));
        }
        let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
        for shard in self.shards.values() {
            for (i, list) in shard.neighbors.iter().enumerate() {
                let owner = shard.ids[i].as_str();
                for e in list {
                    if e.distance <= tau {
                        let (a, b) = if owner < e.id.as_str() {
                            (owner.to_string(), e.id.clone())
                        } else {
                            (e.id.clone(), owner.to_string())
                        };
                        pairs.insert((a, b));
                    } else {
                        break;
                    }
                }
            }
        }
        Ok(pairs.into_iter().collect())
    }
}

/// Free-function variant of the shard scan so rayon closures can use it
/// without borrowing the whole index.
fn scan_list_static(shard: &Shard, i: usize, dim: usize, k: usize) -> Vec<NeighborEntry> {
    let own = shard.row(i, dim);
    let mut scored: Vec<(f32, usize)> = Vec::with_capacity(shard.ids.len().saturating_sub(1));
    for j in 0..shard.ids.len() {
        if j != i {
            scored.push((euclidean_distance_f32(own, shard.row(j, dim)), j));
        }
    }
    scored.sort_by(|a, b| entry_order(a.0, &shard.ids[a.1], b.0, &shard.ids[b.1]));
    scored.truncate(k);
    scored
        .into_iter()
        .map(|(distance, j)| NeighborEntry {
            id: shard.ids[j].clone(),
            distance,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta(group: &str) -> ItemMetadata {
        ItemMetadata::new(group, "v", "g")
    }

    fn item(id: &str, emb: &[f32], group: &str) -> IndexedItem {
        IndexedItem {
            id: id.to_string(),
            embedding: emb.to_vec(),
            metadata: meta(group),
            version: 1,
        }
    }

    fn random_items(rng: &mut ChaCha8Rng, n: usize, dim: usize, groups: &[&str]) -> Vec<IndexedItem> {
        (0..n)
            .map(|i| {
                let emb: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g = groups[i % groups.len()];
                item(&format!("id{i:04}"), &emb, g)
            })
            .collect()
    }

    /// Brute-force oracle: per-partition exhaustive scan with the same
    /// (distance, id) ordering.
    fn oracle_lists(items: &[IndexedItem], k: usize) -> BTreeMap<String, Vec<NeighborEntry>> {
        let mut out = BTreeMap::new();
        for a in items {
            let mut scored: Vec<NeighborEntry> = items
                .iter()
                .filter(|b| b.id != a.id && b.metadata == a.metadata)
                .map(|b| NeighborEntry {
                    id: b.id.clone(),
                    distance: euclidean_distance_f32(&a.embedding, &b.embedding),
                })
                .collect();
            scored.sort_by(|x, y| entry_order(x.distance, &x.id, y.distance, &y.id));
            scored.truncate(k);
            out.insert(a.id.clone(), scored);
        }
        out
    }

    fn assert_matches_oracle(index: &KnnIndex, items: &[IndexedItem], k: usize) {
        let oracle = oracle_lists(items, k);
        assert_eq!(index.len(), items.len());
        for it in items {
            let list = index.neighbor_list(&it.id).unwrap();
            assert_eq!(&list.entries, &oracle[&it.id], "owner {}", it.id);
        }
    }

    #[test]
    fn number_line_example() {
        let items = vec![
            item("a", &[0.0], "g"),
            item("b", &[1.0], "g"),
            item("c", &[3.0], "g"),
        ];
        let index = KnnIndex::build(items, 1).unwrap();
        let n = |id: &str| index.neighbor_list(id).unwrap().entries[0].id.clone();
        assert_eq!(n("a"), "b");
        assert_eq!(n("b"), "a");
        assert_eq!(n("c"), "b");
    }

    #[test]
    fn no_cross_partition_neighbors() {
        let items = vec![
            item("a", &[0.0], "g1"),
            item("b", &[0.1], "g1"),
            item("c", &[0.05], "g2"),
            item("d", &[0.06], "g2"),
        ];
        let index = KnnIndex::build(items, 3).unwrap();
        assert_eq!(index.neighbor_list("a").unwrap().entries.len(), 1);
        assert_eq!(index.neighbor_list("a").unwrap().entries[0].id, "b");
        assert_eq!(index.neighbor_list("c").unwrap().entries[0].id, "d");
    }

    #[test]
    fn build_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let items = random_items(&mut rng, 200, 8, &["g1", "g2", "g3"]);
        let index = KnnIndex::build(items.clone(), 10).unwrap();
        assert_matches_oracle(&index, &items, 10);
    }

    #[test]
    fn duplicate_ids_and_dim_mismatch_rejected() {
        let items = vec![item("a", &[0.0], "g"), item("a", &[1.0], "g")];
        assert!(KnnIndex::build(items, 1).is_err());
        let items = vec![item("a", &[0.0], "g"), item("b", &[1.0, 2.0], "g")];
        assert!(KnnIndex::build(items, 1).is_err());
    }

    #[test]
    fn query_exact_match_first_and_filter_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let items = random_items(&mut rng, 50, 4, &["shirt", "tshirt"]);
        let index = KnnIndex::build(items.clone(), 5).unwrap();

        let probe = &items[7];
        let res = index.query(&probe.embedding, 3, &Filter::default()).unwrap();
        assert_eq!(res.entries[0].id, probe.id);
        assert_eq!(res.entries[0].distance, 0.0);

        let filter = Filter {
            category_group: Some("shirt".into()),
            ..Filter::default()
        };
        let res = index.query(&probe.embedding, 50, &filter).unwrap();
        for e in &res.entries {
            assert_eq!(index.metadata_of(&e.id).unwrap().category_group, "shirt");
        }
    }

    #[test]
    fn filtered_query_matches_filter_then_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let items = random_items(&mut rng, 120, 6, &["a", "b"]);
        let index = KnnIndex::build(items.clone(), 7).unwrap();
        for _ in 0..20 {
            let probe: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let filter = Filter {
                category_group: Some(if rng.random() { "a" } else { "b" }.to_string()),
                ..Filter::default()
            };
            let got = index.query(&probe, 7, &filter).unwrap();

            let mut oracle: Vec<NeighborEntry> = items
                .iter()
                .filter(|it| Filter::matches(&filter, &it.metadata.partition_key()))
                .map(|it| NeighborEntry {
                    id: it.id.clone(),
                    distance: euclidean_distance_f32(&probe, &it.embedding),
                })
                .collect();
            oracle.sort_by(|x, y| entry_order(x.distance, &x.id, y.distance, &y.id));
            oracle.truncate(7);
            assert_eq!(got.entries, oracle);
        }
    }

    #[test]
    fn empty_filter_result_is_empty_list() {
        let items = vec![item("a", &[0.0], "g")];
        let index = KnnIndex::build(items, 1).unwrap();
        let filter = Filter {
            category_group: Some("nope".into()),
            ..Filter::default()
        };
        let res = index.query(&[0.0], 5, &filter).unwrap();
        assert!(res.entries.is_empty());
    }

    #[test]
    fn add_identical_item_becomes_mutual_rank1_at_zero() {
        let items = vec![
            item("a", &[0.5, 0.5], "g"),
            item("b", &[1.0, 0.0], "g"),
            item("c", &[0.0, 1.0], "g"),
        ];
        let index = KnnIndex::build(items, 2).unwrap();
        let twin = item("a2", &[0.5, 0.5], "g");
        let next = index.apply_delta(vec![twin], &[]).unwrap();
        let la = next.neighbor_list("a").unwrap();
        assert_eq!(la.entries[0].id, "a2");
        assert_eq!(la.entries[0].distance, 0.0);
        let la2 = next.neighbor_list("a2").unwrap();
        assert_eq!(la2.entries[0].id, "a");
        assert_eq!(la2.entries[0].distance, 0.0);
        assert_eq!(next.generation(), index.generation() + 1);
    }

    #[test]
    fn removing_unreferenced_item_preserves_other_lists() {
        // "far" is nobody's top-1 neighbor with k=1.
        let items = vec![
            item("a", &[0.0], "g"),
            item("b", &[0.1], "g"),
            item("far", &[100.0], "g"),
        ];
        let index = KnnIndex::build(items, 1).unwrap();
        let before_a = index.neighbor_list("a").unwrap();
        let before_b = index.neighbor_list("b").unwrap();
        let next = index.apply_delta(vec![], &["far".to_string()]).unwrap();
        assert_eq!(next.neighbor_list("a").unwrap(), before_a);
        assert_eq!(next.neighbor_list("b").unwrap(), before_b);
        assert!(next.neighbor_list("far").is_none());
    }

    #[test]
    fn unknown_removed_and_duplicate_added_rejected() {
        let items = vec![item("a", &[0.0], "g"), item("b", &[1.0], "g")];
        let index = KnnIndex::build(items, 1).unwrap();
        assert!(matches!(
            index.apply_delta(vec![], &["zzz".to_string()]),
            Err(Error::UnknownId(_))
        ));
        assert!(index
            .apply_delta(vec![item("a", &[2.0], "g")], &[])
            .is_err());
        // remove+add of the same id is a legal update
        let next = index
            .apply_delta(vec![item("a", &[2.0], "g")], &["a".to_string()])
            .unwrap();
        assert_eq!(next.len(), 2);
    }

    #[test]
    fn randomized_deltas_stay_rebuild_equivalent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut items = random_items(&mut rng, 80, 5, &["g1", "g2"]);
        let mut index = KnnIndex::build(items.clone(), 6).unwrap();
        let mut counter = 1000;

        for op in 0..60 {
            let add = items.len() < 10 || rng.random_bool(0.5);
            if add {
                counter += 1;
                let emb: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g = if rng.random() { "g1" } else { "g2" };
                let it = item(&format!("id{counter}"), &emb, g);
                items.push(it.clone());
                index = index.apply_delta(vec![it], &[]).unwrap();
            } else {
                let victim = rng.random_range(0..items.len());
                let id = items.remove(victim).id;
                index = index.apply_delta(vec![], &[id]).unwrap();
            }
            let rebuilt = KnnIndex::build(items.clone(), 6).unwrap();
            assert_eq!(
                index.content_hash(),
                rebuilt.content_hash(),
                "diverged after op {op}"
            );
        }
    }

    #[test]
    fn near_duplicates_from_planted_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut items = random_items(&mut rng, 40, 4, &["g"]);
        // plant 3 exact duplicates
        for i in 0..3 {
            let mut dup = items[i].clone();
            dup.id = format!("dup{i}");
            items.push(dup);
        }
        let index = KnnIndex::build(items.clone(), 5).unwrap();
        let pairs = index.near_duplicates(1e-6).unwrap();
        assert_eq!(pairs.len(), 3);
        for (i, (a, b)) in pairs.iter().enumerate() {
            assert_eq!(a, &format!("dup{i}"));
            assert_eq!(b, &format!("id{i:04}"));
        }
    }

    #[test]
    fn tau_zero_reports_only_exact_equals() {
        let items = vec![
            item("a", &[0.0, 0.0], "g"),
            item("b", &[0.0, 0.0], "g"),
            item("c", &[0.001, 0.0], "g"),
        ];
        let index = KnnIndex::build(items, 2).unwrap();
        let pairs = index.near_duplicates(0.0).unwrap();
        assert_eq!(pairs, vec![("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn query_cost_scales_with_filtered_shard_size() {
        let mut items = Vec::new();
        for i in 0..10 {
            items.push(item(&format!("s{i}"), &[i as f32], "small"));
        }
        for i in 0..30 {
            items.push(item(&format!("l{i}"), &[i as f32], "large"));
        }
        let index = KnnIndex::build(items, 3).unwrap();
        let probe = [0.5f32];
        let small = Filter {
            category_group: Some("small".into()),
            ..Filter::default()
        };
        let large = Filter {
            category_group: Some("large".into()),
            ..Filter::default()
        };
        let (_, s1) = index.query_with_stats(&probe, 3, &small).unwrap();
        let (_, s2) = index.query_with_stats(&probe, 3, &large).unwrap();
        assert_eq!(s1.distance_evals, 10);
        assert_eq!(s2.distance_evals, 30);
    }

    #[test]
    fn repeated_builds_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let items = random_items(&mut rng, 64, 3, &["g1", "g2"]);
        let a = KnnIndex::build(items.clone(), 4).unwrap();
        let b = KnnIndex::build(items, 4).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }
}
