//! Bootstrapped candidate-triplet generation.
//!
//! Cheap, imperfect similarity rankers (BISS) nominate positive and negative
//! pools for each sampled query; candidates are drawn with the configured
//! in-class / out-of-class mix and an offline vetting file corrects or
//! rejects them.

mod biss;
mod generate;
mod pools;
mod vetting;

pub use biss::{biss_rank, parse_biss_spec, Biss, BissFeatures, BissRanking, ColorHistBiss, EmbeddingBiss};
pub use generate::{
    generate_candidates, read_triplets_jsonl, write_triplets_jsonl, CandidateTriplet, GenConfig,
    GenOutcome, Provenance, TripletClass,
};
pub use pools::{build_pools, PoolConfig, Pools};
pub use vetting::{apply_vetting, read_vetting_jsonl, write_vetting_jsonl, Verdict, VettingRecord};

use crate::net::TripletIds;

impl From<&CandidateTriplet> for TripletIds {
    fn from(c: &CandidateTriplet) -> Self {
        TripletIds {
            q: c.q.clone(),
            p: c.p.clone(),
            n: c.n.clone(),
        }
    }
}
