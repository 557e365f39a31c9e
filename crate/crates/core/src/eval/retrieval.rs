use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PairedCorpus;
use crate::hashing::seeded_hash;
use crate::knn::{build_index, Metric};
use crate::mapper::MapperNetwork;
use crate::{Error, Result};

/// One query's true item plus `k` sampled decoys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorSet {
    pub query_id: String,
    pub true_id: String,
    /// The true id first, then the distractors in sampling order.
    pub candidate_ids: Vec<String>,
}

/// Samples `k` distinct distractors per test id, uniformly without
/// replacement from the pool minus the true item.
///
/// The pool is sorted before sampling and each query gets its own ChaCha8
/// stream seeded with `seeded_hash(query_id, seed)`, so a set depends only
/// on `(pool contents, seed, query id)`, not on test-id order.
pub fn build_distractor_sets<S: AsRef<str>, P: AsRef<str>>(
    test_ids: &[S],
    pool_ids: &[P],
    k: usize,
    seed: u64,
) -> Result<Vec<DistractorSet>> {
    let mut pool: Vec<&str> = pool_ids.iter().map(AsRef::as_ref).collect();
    pool.sort_unstable();
    pool.dedup();
    if pool.len() < k + 1 {
        return Err(Error::PoolTooSmall {
            needed: k + 1,
            available: pool.len(),
        });
    }
    test_ids
        .iter()
        .map(|q| {
            let q = q.as_ref();
            let true_pos = pool
                .binary_search(&q)
                .map_err(|_| Error::UnknownId(q.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seeded_hash(q, seed));
            let mut candidate_ids = Vec::with_capacity(k + 1);
            candidate_ids.push(q.to_string());
            for i in rand::seq::index::sample(&mut rng, pool.len() - 1, k) {
                let i = if i >= true_pos { i + 1 } else { i };
                candidate_ids.push(pool[i].to_string());
            }
            Ok(DistractorSet {
                query_id: q.to_string(),
                true_id: q.to_string(),
                candidate_ids,
            })
        })
        .collect()
}

/// `1 / position` (1-based) of `true_id` in `ranked`, or 0 when absent.
pub fn reciprocal_rank<S: AsRef<str>>(ranked: &[S], true_id: &str) -> f64 {
    ranked
        .iter()
        .position(|id| id.as_ref() == true_id)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Expected MRR of a uniformly random ranking over `candidate_count` items:
/// `H_N / N`.
/// `fraction` as a percentage truncated (not rounded) to three decimals,
/// so H(1000)/1000 = 0.0074854... prints as `"0.748"`. A 1e-6 slack keeps
/// values such as 0.15478 from truncating down through representation error.
pub fn percent3(fraction: f64) -> String {
    let thousandths = (fraction * 100_000.0 + 1e-6).floor();
    format!("{:.3}", thousandths / 1000.0)
}

pub fn random_baseline_mrr(candidate_count: usize) -> f64 {
    assert!(candidate_count >= 1, "candidate_count must be at least 1");
    // Smallest terms first.
    let harmonic: f64 = (1..=candidate_count).rev().map(|r| 1.0 / r as f64).sum();
    harmonic / candidate_count as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    /// 1-based rank of the true item; `None` if it was not retrieved.
    pub rank: Option<usize>,
    pub reciprocal_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub k: usize,
    pub seed: u64,
    pub metric: Metric,
    pub per_query: Vec<QueryResult>,
}

impl EvalReport {
    pub fn from_results(per_query: Vec<QueryResult>, k: usize, seed: u64, metric: Metric) -> Self {
        let mrr = if per_query.is_empty() {
            0.0
        } else {
            per_query.iter().map(|q| q.reciprocal_rank).sum::<f64>() / per_query.len() as f64
        };
        Self {
            mrr,
            k,
            seed,
            metric,
            per_query,
        }
    }

    /// MRR as a percentage truncated to three decimals, e.g. `"15.478"`.
    pub fn mrr_percent(&self) -> String {
        percent3(self.mrr)
    }
}

/// Ranks each set's candidates by distance to the mapped query vector and
/// records the true item's reciprocal rank. Only the set's own candidates
/// are consulted. `seed` is the distractor seed, recorded in the report.
pub fn evaluate_search(
    net: &MapperNetwork,
    corpus: &PairedCorpus,
    sets: &[DistractorSet],
    metric: Metric,
    seed: u64,
) -> Result<EvalReport> {
    if net.input_dim() != corpus.nl_vectors().dim() {
        return Err(Error::DimMismatch {
            expected: corpus.nl_vectors().dim(),
            found: net.input_dim(),
        });
    }
    if net.output_dim() != corpus.code_vectors().dim() {
        return Err(Error::DimMismatch {
            expected: corpus.code_vectors().dim(),
            found: net.output_dim(),
        });
    }
    let k = sets.first().map_or(0, |s| s.candidate_ids.len().saturating_sub(1));
    let mut predictions: HashMap<&str, Vec<f32>> = HashMap::new();
    let mut per_query = Vec::with_capacity(sets.len());
    for set in sets {
        let query = match predictions.get(set.query_id.as_str()) {
            Some(p) => p.clone(),
            None => {
                let row = corpus.require_row(&set.query_id)?;
                let p = net.forward(corpus.nl_vectors().row(row))?;
                predictions.insert(set.query_id.as_str(), p.clone());
                p
            }
        };
        let rows = corpus.rows_for(&set.candidate_ids)?;
        let index = build_index(
            corpus.code_vectors().select_rows(&rows),
            set.candidate_ids.clone(),
            metric,
        )?;
        let hits = index.search(&query, index.len().max(1))?;
        let rank = hits.iter().find(|h| h.id == set.true_id).map(|h| h.rank);
        per_query.push(QueryResult {
            query_id: set.query_id.clone(),
            rank,
            reciprocal_rank: rank.map_or(0.0, |r| 1.0 / r as f64),
        });
    }
    Ok(EvalReport::from_results(per_query, k, seed, metric))
}
