use rayon::prelude::*;

use crate::catalog::Corpus;
use crate::color::colorhist_features;
use crate::embedding::euclidean_f64;
use crate::error::{Error, Result};
use crate::net::Network;

/// A Basic Image Similarity Scorer: a cheap ranker used only to bootstrap
/// candidate training triplets. Each BISS turns the corpus into per-item
/// feature vectors and defines a distance over them.
pub trait Biss: Sync {
    fn name(&self) -> &str;
    fn prepare(&self, corpus: &Corpus) -> Result<BissFeatures>;
    fn distance(&self, a: &[f32], b: &[f32]) -> f64;
}

/// Per-item features, aligned with `Corpus::items()` order.
pub struct BissFeatures {
    pub vectors: Vec<Vec<f32>>,
}

/// LAB color histogram similarity (L1 distance).
pub struct ColorHistBiss;

impl Biss for ColorHistBiss {
    fn name(&self) -> &str {
        "colorhist"
    }

    fn prepare(&self, corpus: &Corpus) -> Result<BissFeatures> {
        let vectors = corpus
            .items()
            .par_iter()
            .map(|item| Ok(colorhist_features(&item.image)?.bins().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BissFeatures { vectors })
    }

    fn distance(&self, a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum()
    }
}

/// Any trained embedding model used as a BISS (Euclidean distance).
pub struct EmbeddingBiss {
    name: String,
    network: Network,
}

impl EmbeddingBiss {
    pub fn new(name: impl Into<String>, network: Network) -> Self {
        EmbeddingBiss {
            name: name.into(),
            network,
        }
    }
}

impl Biss for EmbeddingBiss {
    fn name(&self) -> &str {
        &self.name
    }

    fn prepare(&self, corpus: &Corpus) -> Result<BissFeatures> {
        let images: Vec<_> = corpus.items().iter().map(|it| &it.image).collect();
        let embeddings = self.network.embed_batch(&images)?;
        Ok(BissFeatures {
            vectors: embeddings.into_iter().map(|e| e.values().to_vec()).collect(),
        })
    }

    fn distance(&self, a: &[f32], b: &[f32]) -> f64 {
        euclidean_f64(a, b)
    }
}

/// Parses a CLI BISS spec: `colorhist` or `embed:<model path>`.
pub fn parse_biss_spec(spec: &str) -> Result<Box<dyn Biss>> {
    if spec == "colorhist" {
        return Ok(Box::new(ColorHistBiss));
    }
    if let Some(path) = spec.strip_prefix("embed:") {
        let net = crate::net::load_model(path)?;
        return Ok(Box::new(EmbeddingBiss::new(format!("embed:{path}"), net)));
    }
    Err(Error::UnknownBiss(spec.to_string()))
}

/// One BISS's ranking of a query's candidates: strictly ordered by score
/// (ascending distance), ties broken by ascending id, no self-match.
#[derive(Debug, Clone, PartialEq)]
pub struct BissRanking {
    pub biss: String,
    pub query: String,
    /// (neighbor id, score), best first, length K.
    pub neighbors: Vec<(String, f64)>,
}

/// Ranks `candidate_ids` (which must not contain the query) against the
/// query by the BISS's own distance, returning the top `k`.
pub fn biss_rank(
    biss: &dyn Biss,
    features: &BissFeatures,
    corpus: &Corpus,
    query_id: &str,
    candidate_ids: &[String],
    k: usize,
) -> Result<BissRanking> {
    let index_of = |id: &str| -> Result<usize> {
        corpus
            .index_of(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    };
    let qi = index_of(query_id)?;
    if k > candidate_ids.len() {
        return Err(Error::Config(format!(
            "K={k} exceeds candidate count {}",
            candidate_ids.len()
        )));
    }
    let qf = &features.vectors[qi];
    let mut scored: Vec<(f64, &String)> = Vec::with_capacity(candidate_ids.len());
    for id in candidate_ids {
        if id == query_id {
            return Err(Error::Config(format!("query {query_id} in candidate set")));
        }
        let fi = index_of(id)?;
        scored.push((biss.distance(qf, &features.vectors[fi]), id));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(k);
    Ok(BissRanking {
        biss: biss.name().to_string(),
        query: query_id.to_string(),
        neighbors: scored
            .into_iter()
            .map(|(score, id)| (id.clone(), score))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CorpusItem, ItemMetadata};
    use crate::image::Image;

    fn corpus_of(colors: &[[u8; 3]]) -> Corpus {
        let items = colors
            .iter()
            .enumerate()
            .map(|(i, &rgb)| CorpusItem {
                id: format!("i{i}"),
                image: Image::filled(8, 8, rgb),
                metadata: ItemMetadata::new("g", "v", "u"),
            })
            .collect();
        Corpus::new(items).unwrap()
    }

    #[test]
    fn corpus_of_three_ranks_both_candidates() {
        let corpus = corpus_of(&[[255, 0, 0], [250, 0, 0], [0, 0, 255]]);
        let biss = ColorHistBiss;
        let features = biss.prepare(&corpus).unwrap();
        let candidates = vec!["i1".to_string(), "i2".to_string()];
        let ranking = biss_rank(&biss, &features, &corpus, "i0", &candidates, 2).unwrap();
        assert_eq!(ranking.neighbors.len(), 2);
        // The near-red duplicate outranks blue.
        assert_eq!(ranking.neighbors[0].0, "i1");
        assert_eq!(ranking.neighbors[1].0, "i2");
    }

    #[test]
    fn planted_duplicate_ranks_first_at_distance_zero() {
        let corpus = corpus_of(&[[10, 200, 30], [10, 200, 30], [0, 0, 255], [200, 200, 0]]);
        let biss = ColorHistBiss;
        let features = biss.prepare(&corpus).unwrap();
        let candidates: Vec<String> = ["i1", "i2", "i3"].iter().map(|s| s.to_string()).collect();
        let ranking = biss_rank(&biss, &features, &corpus, "i0", &candidates, 3).unwrap();
        assert_eq!(ranking.neighbors[0].0, "i1");
        assert_eq!(ranking.neighbors[0].1, 0.0);
    }

    /// Ranking equals an exhaustive scan ordering (the oracle sorts the whole
    /// candidate set by recomputed distances).
    #[test]
    fn colorhist_ranking_matches_bruteforce_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let colors: Vec<[u8; 3]> = (0..30)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let corpus = corpus_of(&colors);
        let biss = ColorHistBiss;
        let features = biss.prepare(&corpus).unwrap();
        let candidates: Vec<String> = (1..30).map(|i| format!("i{i}")).collect();
        let ranking = biss_rank(&biss, &features, &corpus, "i0", &candidates, 10).unwrap();

        // Oracle: recompute every histogram distance from scratch.
        let q_hist = colorhist_features(&corpus.get("i0").unwrap().image).unwrap();
        let mut oracle: Vec<(f64, String)> = candidates
            .iter()
            .map(|id| {
                let h = colorhist_features(&corpus.get(id).unwrap().image).unwrap();
                (q_hist.l1_distance(&h), id.clone())
            })
            .collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        for (got, want) in ranking.neighbors.iter().zip(&oracle) {
            assert_eq!(got.0, want.1);
            assert!((got.1 - want.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_spec_rejected() {
        assert!(matches!(
            parse_biss_spec("patternnet"),
            Err(Error::UnknownBiss(_))
        ));
    }
}
