use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::biss::{biss_rank, Biss, BissFeatures, BissRanking};
use super::pools::{build_pools, PoolConfig, Pools};
use crate::catalog::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TripletClass {
    #[serde(rename = "in-class")]
    InClass,
    #[serde(rename = "out-of-class")]
    OutOfClass,
}

impl std::fmt::Display for TripletClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TripletClass::InClass => write!(f, "in-class"),
            TripletClass::OutOfClass => write!(f, "out-of-class"),
        }
    }
}

/// Which BISS pools produced the positive and the negative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub p: Vec<String>,
    pub n: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateTriplet {
    pub q: String,
    pub p: String,
    pub n: String,
    pub class: TripletClass,
    #[serde(default)]
    pub provenance: Provenance,
}

impl CandidateTriplet {
    pub fn key(&self) -> (String, String, String) {
        (self.q.clone(), self.p.clone(), self.n.clone())
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub count: usize,
    /// Fraction of in-class negatives; the default mix is 30/70.
    pub in_class_frac: f64,
    pub seed: u64,
    /// Override the automatic small-corpus pool scaling.
    pub pool_cfg: Option<PoolConfig>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            count: 1000,
            in_class_frac: 0.3,
            seed: 0,
            pool_cfg: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenOutcome {
    pub triplets: Vec<CandidateTriplet>,
    pub warnings: Vec<String>,
}

/// Generates candidate triplets with exact class counts:
/// `round(in_class_frac * count)` in-class, the rest out-of-class.
///
/// `q` is drawn uniformly from the corpus, `p` uniformly from the positive
/// pool, `n` uniformly from the class-designated pool. Queries whose pools
/// cannot serve the requested class are skipped with a warning; pool
/// exhaustion yields fewer triplets rather than an error. Output order is
/// canonical (q, class, n, p) regardless of sampling order.
pub fn generate_candidates(
    corpus: &Corpus,
    bisses: &[Box<dyn Biss>],
    cfg: &GenConfig,
) -> Result<GenOutcome> {
    if cfg.count == 0 {
        return Err(Error::Config("count must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.in_class_frac) {
        return Err(Error::Config(format!(
            "in-class fraction {} not in [0,1]",
            cfg.in_class_frac
        )));
    }
    if bisses.is_empty() {
        return Err(Error::Config("at least one BISS required".into()));
    }
    if corpus.len() < 2 {
        return Err(Error::Config("corpus too small".into()));
    }

    let features: Vec<BissFeatures> = bisses
        .iter()
        .map(|b| b.prepare(corpus))
        .collect::<Result<Vec<_>>>()?;

    // Same-group candidate sets and pool configs are shared across queries.
    let mut group_ids: HashMap<&str, Vec<String>> = HashMap::new();
    for item in corpus.items() {
        group_ids
            .entry(item.metadata.category_group.as_str())
            .or_default()
            .push(item.id.clone());
    }
    for ids in group_ids.values_mut() {
        ids.sort_unstable();
    }

    let n_in = (cfg.in_class_frac * cfg.count as f64).round() as usize;
    let n_out = cfg.count - n_in.min(cfg.count);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut warnings = Vec::new();
    let mut triplets = Vec::with_capacity(cfg.count);
    let mut pool_cache: HashMap<String, Option<(Pools, Vec<BissRanking>)>> = HashMap::new();

    for (class, want) in [
        (TripletClass::InClass, n_in),
        (TripletClass::OutOfClass, n_out),
    ] {
        let mut made = 0usize;
        let mut attempts = 0usize;
        let budget = want.saturating_mul(50).max(50);
        while made < want && attempts < budget {
            attempts += 1;
            let q_item = &corpus.items()[rng.random_range(0..corpus.len())];
            let q = q_item.id.clone();
            let group = q_item.metadata.category_group.clone();

            if !pool_cache.contains_key(&q) {
                let computed = build_query_pools(
                    corpus,
                    bisses,
                    &features,
                    &q,
                    &group_ids[group.as_str()],
                    cfg.pool_cfg,
                    &mut warnings,
                )?;
                pool_cache.insert(q.clone(), computed);
            }
            let Some((pools, rankings)) = pool_cache.get(&q).unwrap() else {
                continue;
            };

            let Some(p) = pools.positive.choose(&mut rng) else {
                continue;
            };
            let negatives = match class {
                TripletClass::InClass => &pools.in_class,
                TripletClass::OutOfClass => &pools.out_class,
            };
            let Some(n) = negatives.choose(&mut rng) else {
                continue;
            };
            let same_group = &group_ids[group.as_str()];
            let provenance = Provenance {
                p: biss_sources(rankings, p, |rank, cfg| rank <= cfg.top_p, cfg.pool_cfg, same_group),
                n: match class {
                    TripletClass::InClass => biss_sources(
                        rankings,
                        n,
                        |rank, cfg| rank > cfg.inclass_lo && rank <= cfg.inclass_hi,
                        cfg.pool_cfg,
                        same_group,
                    ),
                    TripletClass::OutOfClass => vec!["universe".to_string()],
                },
            };
            triplets.push(CandidateTriplet {
                q,
                p: p.clone(),
                n: n.clone(),
                class,
                provenance,
            });
            made += 1;
        }
        if made < want {
            warnings.push(format!(
                "pool exhaustion: emitted {made}/{want} {class} triplets"
            ));
        }
    }

    triplets.sort_by(|a, b| {
        (&a.q, &a.class, &a.n, &a.p).cmp(&(&b.q, &b.class, &b.n, &b.p))
    });
    Ok(GenOutcome { triplets, warnings })
}

/// Ranks the query with every BISS and builds its pools; `None` (plus a
/// warning) when the positive pool comes out empty.
#[allow(clippy::too_many_arguments)]
fn build_query_pools(
    corpus: &Corpus,
    bisses: &[Box<dyn Biss>],
    features: &[BissFeatures],
    q: &str,
    same_group: &[String],
    pool_cfg: Option<PoolConfig>,
    warnings: &mut Vec<String>,
) -> Result<Option<(Pools, Vec<BissRanking>)>> {
    let candidates: Vec<String> = same_group
        .iter()
        .filter(|id| id.as_str() != q)
        .cloned()
        .collect();
    if candidates.is_empty() {
        warnings.push(format!("query {q}: no same-group candidates, skipped"));
        return Ok(None);
    }
    let cfg = pool_cfg.unwrap_or_else(|| PoolConfig::scaled_for(candidates.len()));
    if cfg.k > candidates.len() {
        warnings.push(format!(
            "query {q}: K={} exceeds {} candidates, skipped",
            cfg.k,
            candidates.len()
        ));
        return Ok(None);
    }
    let rankings = bisses
        .iter()
        .zip(features)
        .map(|(b, f)| biss_rank(b.as_ref(), f, corpus, q, &candidates, cfg.k))
        .collect::<Result<Vec<_>>>()?;
    let pools = build_pools(q, &rankings, same_group, &cfg)?;
    if pools.positive.is_empty() {
        warnings.push(format!("query {q}: empty positive pool, skipped"));
        return Ok(None);
    }
    Ok(Some((pools, rankings)))
}

/// Names of the BISSs whose rank band contains `id`.
fn biss_sources(
    rankings: &[BissRanking],
    id: &str,
    in_band: impl Fn(usize, &PoolConfig) -> bool,
    pool_cfg: Option<PoolConfig>,
    same_group: &[String],
) -> Vec<String> {
    let cfg = pool_cfg.unwrap_or_else(|| PoolConfig::scaled_for(same_group.len() - 1));
    let mut out: Vec<String> = rankings
        .iter()
        .filter(|r| {
            r.neighbors
                .iter()
                .position(|(nid, _)| nid == id)
                .is_some_and(|i| in_band(i + 1, &cfg))
        })
        .map(|r| r.biss.clone())
        .collect();
    out.sort_unstable();
    out
}

pub fn write_triplets_jsonl(triplets: &[CandidateTriplet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for t in triplets {
        serde_json::to_writer(&mut out, t)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_triplets_jsonl(path: impl AsRef<Path>) -> Result<Vec<CandidateTriplet>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: CandidateTriplet = serde_json::from_str(line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CorpusItem, ItemMetadata};
    use crate::image::Image;
    use crate::triplets::ColorHistBiss;

    /// 40 items in two color families so ColorHist produces meaningful
    /// rankings, all in one category group.
    fn toy_corpus() -> Corpus {
        let mut items = Vec::new();
        for i in 0..40u32 {
            let rgb = if i < 20 {
                [200 + (i % 10) as u8 * 5, 30, 30]
            } else {
                [30, 30, 200 + (i % 10) as u8 * 5]
            };
            items.push(CorpusItem {
                id: format!("item{i:02}"),
                image: Image::filled(8, 8, rgb),
                metadata: ItemMetadata::new("clothing", "shirt", "unknown"),
            });
        }
        Corpus::new(items).unwrap()
    }

    fn bisses() -> Vec<Box<dyn Biss>> {
        vec![Box::new(ColorHistBiss)]
    }

    #[test]
    fn exact_class_mix() {
        let corpus = toy_corpus();
        let cfg = GenConfig {
            count: 40,
            in_class_frac: 0.3,
            seed: 9,
            pool_cfg: None,
        };
        let out = generate_candidates(&corpus, &bisses(), &cfg).unwrap();
        let in_count = out
            .triplets
            .iter()
            .filter(|t| t.class == TripletClass::InClass)
            .count();
        assert_eq!(out.triplets.len(), 40);
        assert_eq!(in_count, 12);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let corpus = toy_corpus();
        let cfg = GenConfig {
            count: 30,
            seed: 4,
            ..GenConfig::default()
        };
        let a = generate_candidates(&corpus, &bisses(), &cfg).unwrap();
        let b = generate_candidates(&corpus, &bisses(), &cfg).unwrap();
        assert_eq!(a.triplets, b.triplets);
    }

    #[test]
    fn invariants_hold_for_all_emitted_triplets() {
        let corpus = toy_corpus();
        let cfg = GenConfig {
            count: 60,
            seed: 2,
            ..GenConfig::default()
        };
        let out = generate_candidates(&corpus, &bisses(), &cfg).unwrap();
        for t in &out.triplets {
            assert_ne!(t.q, t.p);
            assert_ne!(t.q, t.n);
            assert_ne!(t.p, t.n);
            let g = |id: &str| corpus.get(id).unwrap().metadata.category_group.clone();
            assert_eq!(g(&t.q), g(&t.p));
            assert_eq!(g(&t.q), g(&t.n));
            if t.class == TripletClass::OutOfClass {
                assert_eq!(t.provenance.n, vec!["universe".to_string()]);
            } else {
                assert!(!t.provenance.n.is_empty());
            }
            assert!(!t.provenance.p.is_empty());
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let corpus = toy_corpus();
        let cfg = GenConfig {
            count: 10,
            seed: 1,
            ..GenConfig::default()
        };
        let out = generate_candidates(&corpus, &bisses(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_triplets_jsonl(&out.triplets, &path).unwrap();
        let back = read_triplets_jsonl(&path).unwrap();
        assert_eq!(out.triplets, back);
    }
}
