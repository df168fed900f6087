//! Passage rankers and Recall@k.
//!
//! Every ranker returns a [`RankedPassages`]: unique indices with
//! non-increasing scores, ties broken toward the lower passage index.

mod dense;
mod neural;
mod seq;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::corpus::{tokenize, Instance, TokenSeq};
use crate::textmetrics::rouge_n;

pub use dense::{
    batch_loss_and_grads, contrastive_loss, dense_rank, dense_train, DenseRankerModel, DenseTrainConfig,
    FeatureConfig, LossAndGrads, TrainOutcome, EMBED_DIM,
};
pub use neural::{neural_inputs, neural_rank, parse_index_sequence};
pub use seq::{seq_fit, seq_rank, silver_sequence, SeqRankerModel};

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unparseable ranker output: {0}")]
    Parse(String),
}

/// The ranking query: entity, section title, factual key names, then
/// topical keys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub entity: String,
    pub title: String,
    pub keys: Vec<String>,
}

impl Query {
    pub fn from_instance(instance: &Instance) -> Self {
        Self {
            entity: instance.entity.clone(),
            title: instance.title.clone(),
            keys: instance.key_names().map(str::to_string).chain(instance.topical_keys.iter().cloned()).collect(),
        }
    }

    /// `"entity title k_1 ... k_m"`, skipping empty parts.
    pub fn text(&self) -> String {
        std::iter::once(self.entity.as_str())
            .chain(std::iter::once(self.title.as_str()))
            .chain(self.keys.iter().map(String::as_str))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn tokens(&self) -> TokenSeq {
        tokenize(&self.text())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPassages {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    pub k: usize,
    pub num_passages: usize,
}

impl RankedPassages {
    /// Sorts all passages by score, descending, lower index first on ties,
    /// and keeps the top `k`.
    pub fn from_scores(scores: &[f64], k: usize) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(k.min(scores.len()));
        Self { scores: order.iter().map(|&i| scores[i]).collect(), order, k, num_passages: scores.len() }
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }

    /// Checks uniqueness, range, score order and length.
    pub fn check(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        if let Some(i) = self.order.iter().find(|&&i| i >= self.num_passages || !seen.insert(i)) {
            return Err(format!("index {i} repeated or out of range"));
        }
        if self.order.len() != self.scores.len() || self.order.len() != self.k.min(self.num_passages) {
            return Err("order, scores and k disagree in length".into());
        }
        if self.scores.windows(2).any(|w| w[1] > w[0]) {
            return Err("scores increase along the order".into());
        }
        Ok(())
    }
}

/// Overlap of the two top-k sets over `min(k, N)`.
pub fn recall_at_k(predicted: &RankedPassages, oracle: &RankedPassages, k: usize) -> f64 {
    let denom = k.min(oracle.num_passages);
    if denom == 0 {
        return 0.0;
    }
    let gold: HashSet<usize> = oracle.top(k).iter().copied().collect();
    predicted.top(k).iter().filter(|i| gold.contains(i)).count() as f64 / denom as f64
}

/// Passages by ROUGE-2 recall against the reference.
pub fn rank_rouge2_oracle(instance: &Instance, k: usize) -> RankedPassages {
    let reference = tokenize(&instance.reference);
    let scores: Vec<f64> = instance.passages.iter().map(|p| rouge_n(&tokenize(p), &reference, 2).recall).collect();
    RankedPassages::from_scores(&scores, k)
}

/// Per-instance tf-idf statistics over the instance's own passages.
pub struct TfidfIndex {
    docs: Vec<HashMap<String, f64>>,
    idf: HashMap<String, f64>,
    n: usize,
}

impl TfidfIndex {
    pub fn new(passages: &[String]) -> Self {
        let docs: Vec<HashMap<String, f64>> = passages
            .iter()
            .map(|p| {
                let mut tf = HashMap::new();
                for t in tokenize(p).into_inner() {
                    *tf.entry(t).or_insert(0.0) += 1.0;
                }
                tf
            })
            .collect();
        let mut df: HashMap<String, usize> = HashMap::new();
        for d in &docs {
            for t in d.keys() {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let n = docs.len();
        let idf = df.into_iter().map(|(t, c)| (t, idf_value(n, c))).collect();
        Self { docs, idf, n }
    }

    pub fn idf(&self, term: &str) -> f64 {
        self.idf.get(term).copied().unwrap_or_else(|| idf_value(self.n, 0))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Σ over distinct query terms of raw tf in the passage times idf.
    pub fn score(&self, query: &TokenSeq, passage: usize) -> f64 {
        let terms: HashSet<&String> = query.iter().collect();
        let mut terms: Vec<&String> = terms.into_iter().collect();
        terms.sort();
        terms.iter().map(|t| self.docs[passage].get(*t).copied().unwrap_or(0.0) * self.idf(t)).sum()
    }

    fn weighted(&self, tf: &HashMap<String, f64>) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = tf.iter().map(|(t, c)| (t.clone(), c * self.idf(t))).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|(_, x)| *x /= norm);
        }
        v
    }

    /// Unit tf-idf vector of each passage, sorted by term.
    pub fn passage_vectors(&self) -> Vec<Vec<(String, f64)>> {
        self.docs.iter().map(|d| self.weighted(d)).collect()
    }

    pub fn query_vector(&self, query: &TokenSeq) -> Vec<(String, f64)> {
        let mut tf = HashMap::new();
        for t in query {
            *tf.entry(t.clone()).or_insert(0.0) += 1.0;
        }
        self.weighted(&tf)
    }
}

fn idf_value(n: usize, df: usize) -> f64 {
    ((n as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
}

/// Dot product of two term-sorted sparse vectors.
pub(crate) fn sparse_dot(a: &[(String, f64)], b: &[(String, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

pub fn rank_tfidf(instance: &Instance, k: usize) -> RankedPassages {
    let index = TfidfIndex::new(&instance.passages);
    let query = Query::from_instance(instance).tokens();
    let scores: Vec<f64> = (0..index.len()).map(|i| index.score(&query, i)).collect();
    RankedPassages::from_scores(&scores, k)
}

/// Independent ranking by tf-idf cosine between query and passage.
pub fn rank_tfidf_cosine(instance: &Instance, k: usize) -> RankedPassages {
    let index = TfidfIndex::new(&instance.passages);
    let q = index.query_vector(&Query::from_instance(instance).tokens());
    let scores: Vec<f64> = index.passage_vectors().iter().map(|p| sparse_dot(&q, p)).collect();
    RankedPassages::from_scores(&scores, k)
}
