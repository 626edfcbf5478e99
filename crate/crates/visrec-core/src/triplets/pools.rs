use std::collections::BTreeSet;

use super::biss::BissRanking;
use crate::error::{Error, Result};

/// Pool geometry over BISS rankings of length `k`: positives come from each
/// ranking's top `top_p`, in-class negatives from ranks `(inclass_lo,
/// inclass_hi]`, out-of-class negatives from same-group items outside every
/// ranking's top `inclass_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    pub k: usize,
    pub top_p: usize,
    pub inclass_lo: usize,
    pub inclass_hi: usize,
}

impl PoolConfig {
    /// Production-scale defaults: top 1000 neighbors, positives from the top
    /// 200, in-class negatives from ranks (500, 1000].
    pub fn paper_scale() -> Self {
        PoolConfig {
            k: 1000,
            top_p: 200,
            inclass_lo: 500,
            inclass_hi: 1000,
        }
    }

    /// Preserves the production proportions on small corpora: for `n`
    /// same-group candidates below 1250, K=ceil(0.8n), P=ceil(0.2K),
    /// in-class band (ceil(0.5K), K].
    pub fn scaled_for(n: usize) -> Self {
        if n >= 1250 {
            return Self::paper_scale();
        }
        let k = (4 * n).div_ceil(5);
        PoolConfig {
            k,
            top_p: k.div_ceil(5),
            inclass_lo: k.div_ceil(2),
            inclass_hi: k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.top_p == 0 {
            return Err(Error::Config("zero pool parameter".into()));
        }
        if self.top_p > self.k || self.inclass_hi > self.k || self.inclass_lo >= self.inclass_hi {
            return Err(Error::Config(format!(
                "inconsistent pool config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Sampling pools for one query; each pool is sorted ascending by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pools {
    pub positive: Vec<String>,
    pub in_class: Vec<String>,
    pub out_class: Vec<String>,
}

/// Builds the positive / in-class / out-of-class pools from per-BISS
/// rankings, against the query's same-category-group universe.
pub fn build_pools(
    query_id: &str,
    rankings: &[BissRanking],
    same_group_ids: &[String],
    cfg: &PoolConfig,
) -> Result<Pools> {
    cfg.validate()?;
    if rankings.is_empty() {
        return Err(Error::Config("no BISS rankings".into()));
    }
    for r in rankings {
        if r.query != query_id {
            return Err(Error::Config(format!(
                "ranking for {} used while building pools for {query_id}",
                r.query
            )));
        }
        if r.neighbors.len() != cfg.k {
            return Err(Error::Config(format!(
                "ranking from {} has {} entries, expected K={}",
                r.biss,
                r.neighbors.len(),
                cfg.k
            )));
        }
    }

    let mut positive = BTreeSet::new();
    let mut mid_band = BTreeSet::new();
    let mut any_top_hi = BTreeSet::new();
    for r in rankings {
        for (rank0, (id, _)) in r.neighbors.iter().enumerate() {
            let rank = rank0 + 1;
            if rank <= cfg.top_p {
                positive.insert(id.clone());
            }
            if rank > cfg.inclass_lo && rank <= cfg.inclass_hi {
                mid_band.insert(id.clone());
            }
            if rank <= cfg.inclass_hi {
                any_top_hi.insert(id.clone());
            }
        }
    }
    let in_class: Vec<String> = mid_band.difference(&positive).cloned().collect();
    let out_class: Vec<String> = same_group_ids
        .iter()
        .filter(|id| id.as_str() != query_id && !any_top_hi.contains(*id))
        .cloned()
        .collect();

    Ok(Pools {
        positive: positive.into_iter().collect(),
        in_class,
        out_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranking(biss: &str, query: &str, ids: &[usize]) -> BissRanking {
        BissRanking {
            biss: biss.into(),
            query: query.into(),
            neighbors: ids
                .iter()
                .enumerate()
                .map(|(i, &id)| (format!("x{id:04}"), i as f64))
                .collect(),
        }
    }

    #[test]
    fn scaled_config_preserves_proportions() {
        let cfg = PoolConfig::scaled_for(60);
        assert_eq!(cfg.k, 48);
        assert_eq!(cfg.top_p, 10);
        assert_eq!(cfg.inclass_lo, 24);
        assert_eq!(cfg.inclass_hi, 48);
        cfg.validate().unwrap();
        assert_eq!(PoolConfig::scaled_for(5000), PoolConfig::paper_scale());
    }

    #[test]
    fn disjoint_top_p_unions_add_up() {
        // Two BISS rankings with disjoint top-P: positive pool is the union.
        let cfg = PoolConfig {
            k: 8,
            top_p: 3,
            inclass_lo: 4,
            inclass_hi: 8,
        };
        let r1 = ranking("a", "q", &[0, 1, 2, 3, 4, 5, 6, 7]);
        let r2 = ranking("b", "q", &[10, 11, 12, 3, 4, 5, 6, 7]);
        let same_group: Vec<String> = (0..20).map(|i| format!("x{i:04}")).collect();
        let pools = build_pools("q", &[r1, r2], &same_group, &cfg).unwrap();
        assert_eq!(pools.positive.len(), 6);
    }

    /// Pools partition correctly against a direct set-algebra oracle.
    #[test]
    fn pools_match_set_algebra_oracle() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 60usize;
        let cfg = PoolConfig::scaled_for(n - 1);
        let ids: Vec<usize> = (1..n).collect();

        let mut rankings = Vec::new();
        for biss in ["colorhist", "embed"] {
            let mut order = ids.clone();
            order.shuffle(&mut rng);
            order.truncate(cfg.k);
            rankings.push(ranking(biss, "x0000", &order));
        }
        let same_group: Vec<String> = (0..n).map(|i| format!("x{i:04}")).collect();
        let pools = build_pools("x0000", &rankings, &same_group, &cfg).unwrap();

        // Oracle via plain set algebra on the same rankings.
        use std::collections::BTreeSet;
        let set = |f: &dyn Fn(usize) -> bool| -> BTreeSet<String> {
            let mut s = BTreeSet::new();
            for r in &rankings {
                for (i, (id, _)) in r.neighbors.iter().enumerate() {
                    if f(i + 1) {
                        s.insert(id.clone());
                    }
                }
            }
            s
        };
        let pos_oracle = set(&|rank| rank <= cfg.top_p);
        let mid_oracle: BTreeSet<String> = set(&|rank| rank > cfg.inclass_lo && rank <= cfg.inclass_hi)
            .difference(&pos_oracle)
            .cloned()
            .collect();
        let tophi_oracle = set(&|rank| rank <= cfg.inclass_hi);
        let out_oracle: Vec<String> = same_group
            .iter()
            .filter(|id| id.as_str() != "x0000" && !tophi_oracle.contains(*id))
            .cloned()
            .collect();

        assert_eq!(pools.positive, pos_oracle.into_iter().collect::<Vec<_>>());
        assert_eq!(pools.in_class, mid_oracle.into_iter().collect::<Vec<_>>());
        assert_eq!(pools.out_class, out_oracle);
    }

    proptest! {
        /// Pool disjointness holds for arbitrary rankings.
        #[test]
        fn pools_are_disjoint(seed in 0u64..500) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 40usize;
            let cfg = PoolConfig::scaled_for(n - 1);
            let ids: Vec<usize> = (1..n).collect();
            let mut rankings = Vec::new();
            for biss in ["a", "b", "c"] {
                let mut order = ids.clone();
                order.shuffle(&mut rng);
                order.truncate(cfg.k);
                rankings.push(ranking(biss, "x0000", &order));
            }
            let same_group: Vec<String> = (0..n).map(|i| format!("x{i:04}")).collect();
            let pools = build_pools("x0000", &rankings, &same_group, &cfg).unwrap();

            let pos: std::collections::BTreeSet<_> = pools.positive.iter().collect();
            let inc: std::collections::BTreeSet<_> = pools.in_class.iter().collect();
            let out: std::collections::BTreeSet<_> = pools.out_class.iter().collect();
            prop_assert!(pos.is_disjoint(&inc));
            prop_assert!(out.is_disjoint(&pos));
            prop_assert!(out.is_disjoint(&inc));
            prop_assert!(!pos.contains(&"x0000".to_string()));
        }
    }
}
