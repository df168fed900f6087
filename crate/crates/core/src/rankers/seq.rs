//! Greedy sequential ranker: tf-idf relevance minus redundancy with the
//! passages already picked, fitted by grid search against the silver
//! sequence.

use serde::{Deserialize, Serialize};

use super::{rank_rouge2_oracle, recall_at_k, sparse_dot, Query, RankedPassages, RankerError, TfidfIndex};
use crate::corpus::Instance;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqRankerModel {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SeqRankerModel {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.0 }
    }
}

/// Silver supervision: the ROUGE-2 oracle order.
pub fn silver_sequence(instance: &Instance, k: usize) -> Vec<usize> {
    rank_rouge2_oracle(instance, k).order
}

/// Picks `k` passages one at a time, each maximizing
/// `alpha * cos(q, p) - beta * max_{s picked} cos(p, s)`.
pub fn seq_rank(model: &SeqRankerModel, instance: &Instance, k: usize) -> RankedPassages {
    let index = TfidfIndex::new(&instance.passages);
    let q = index.query_vector(&Query::from_instance(instance).tokens());
    let vecs = index.passage_vectors();
    let relevance: Vec<f64> = vecs.iter().map(|p| model.alpha * sparse_dot(&q, p)).collect();
    let n = vecs.len();
    let mut redundancy = vec![0.0f64; n];
    let mut picked = vec![false; n];
    let mut order = Vec::new();
    let mut scores = Vec::new();
    for _ in 0..k.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !picked[i]) {
            let s = relevance[i] - model.beta * redundancy[i];
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, s) = best.expect("a candidate remains");
        picked[i] = true;
        order.push(i);
        scores.push(s);
        for j in (0..n).filter(|&j| !picked[j]) {
            redundancy[j] = redundancy[j].max(sparse_dot(&vecs[i], &vecs[j]));
        }
    }
    RankedPassages { order, scores, k, num_passages: n }
}

/// First grid point with the highest mean Recall@k against the silver
/// sequence.
pub fn seq_fit(train: &[Instance], k: usize, grid: &[(f64, f64)]) -> Result<SeqRankerModel, RankerError> {
    if grid.is_empty() {
        return Err(RankerError::Config("parameter grid is empty".into()));
    }
    if train.is_empty() {
        return Err(RankerError::Config("training set is empty".into()));
    }
    if let Some(p) = grid.iter().find(|(a, b)| !(a.is_finite() && b.is_finite() && *a >= 0.0 && *b >= 0.0)) {
        return Err(RankerError::Config(format!("grid point {p:?} must be finite and non-negative")));
    }
    let silver: Vec<RankedPassages> = train.iter().map(|i| rank_rouge2_oracle(i, k)).collect();
    let mut best: Option<(SeqRankerModel, f64)> = None;
    for &(alpha, beta) in grid {
        let model = SeqRankerModel { alpha, beta };
        let total: f64 = train.iter().zip(&silver).map(|(inst, gold)| recall_at_k(&seq_rank(&model, inst, k), gold, k)).sum();
        let mean = total / train.len() as f64;
        log::debug!("seq grid ({alpha}, {beta}): Recall@{k} {mean:.4}");
        if best.is_none_or(|(_, b)| mean > b) {
            best = Some((model, mean));
        }
    }
    Ok(best.expect("grid is non-empty").0)
}
