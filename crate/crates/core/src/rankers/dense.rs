//! Bi-encoder ranker trained with in-batch negatives.
//!
//! Texts become hashed unigram + character-trigram bags; two linear
//! projections map queries and passages into a shared space scored by dot
//! product.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Query, RankedPassages, RankerError};
use crate::corpus::{tokenize, Instance};
use crate::hashing::{hashed_bag, SparseVec};

pub const EMBED_DIM: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub hash_dim: usize,
    pub char_trigrams: bool,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { hash_dim: 1024, char_trigrams: true, seed: 17 }
    }
}

impl FeatureConfig {
    pub fn features(&self, text: &str) -> SparseVec {
        hashed_bag(&tokenize(text), self.hash_dim, self.char_trigrams, self.seed)
    }
}

/// Projection matrices stored row-major, `hash_dim × embed_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseRankerModel {
    pub features: FeatureConfig,
    pub embed_dim: usize,
    pub query_projection: Vec<f64>,
    pub passage_projection: Vec<f64>,
}

impl DenseRankerModel {
    /// Independent uniform initialization of both projections.
    pub fn init(features: FeatureConfig, embed_dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = features.hash_dim * embed_dim;
        let mut draw = || (0..n).map(|_| rng.gen_range(-scale..=scale)).collect::<Vec<f64>>();
        let query_projection = draw();
        let passage_projection = draw();
        Self { features, embed_dim, query_projection, passage_projection }
    }

    pub fn zeros(features: FeatureConfig, embed_dim: usize) -> Self {
        let n = features.hash_dim * embed_dim;
        Self { features, embed_dim, query_projection: vec![0.0; n], passage_projection: vec![0.0; n] }
    }

    pub fn validate(&self) -> Result<(), RankerError> {
        let n = self.features.hash_dim * self.embed_dim;
        if self.features.hash_dim == 0 || self.embed_dim == 0 {
            return Err(RankerError::Config("dimensions must be positive".into()));
        }
        if self.query_projection.len() != n || self.passage_projection.len() != n {
            return Err(RankerError::Config(format!("projections must have {n} entries")));
        }
        Ok(())
    }

    fn project(&self, w: &[f64], x: &SparseVec) -> Vec<f64> {
        let d = self.embed_dim;
        let mut out = vec![0.0; d];
        for &(i, xi) in x {
            for (o, wij) in out.iter_mut().zip(&w[i * d..(i + 1) * d]) {
                *o += xi * wij;
            }
        }
        out
    }

    pub fn encode_query(&self, text: &str) -> Vec<f64> {
        self.project(&self.query_projection, &self.features.features(text))
    }

    pub fn encode_passage(&self, text: &str) -> Vec<f64> {
        self.project(&self.passage_projection, &self.features.features(text))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean in-batch cross-entropy over encoded pairs and its gradients with
/// respect to each query and passage vector.
pub fn contrastive_loss(q: &[Vec<f64>], r: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let b = q.len();
    assert_eq!(b, r.len(), "query and passage batches differ in size");
    let d = q.first().map_or(0, Vec::len);
    let mut loss = 0.0;
    // g[i][j] = dL/dS_ij = (softmax_j(S_i) - [i == j]) / B
    let mut g = vec![vec![0.0; b]; b];
    for i in 0..b {
        let s: Vec<f64> = r.iter().map(|rj| dot(&q[i], rj)).collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
        loss += m + z.ln() - s[i];
        for j in 0..b {
            g[i][j] = ((s[j] - m).exp() / z - if i == j { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    let mut dq = vec![vec![0.0; d]; b];
    let mut dr = vec![vec![0.0; d]; b];
    for i in 0..b {
        for j in 0..b {
            for k in 0..d {
                dq[i][k] += g[i][j] * r[j][k];
                dr[j][k] += g[i][j] * q[i][k];
            }
        }
    }
    (loss / b as f64, dq, dr)
}

pub struct LossAndGrads {
    pub loss: f64,
    pub grad_query: Vec<f64>,
    pub grad_passage: Vec<f64>,
}

/// Loss of one batch of featurized pairs and its gradients with respect to
/// both projection matrices (same layout as the model).
pub fn batch_loss_and_grads(model: &DenseRankerModel, xq: &[SparseVec], xr: &[SparseVec]) -> LossAndGrads {
    let q: Vec<Vec<f64>> = xq.iter().map(|x| model.project(&model.query_projection, x)).collect();
    let r: Vec<Vec<f64>> = xr.iter().map(|x| model.project(&model.passage_projection, x)).collect();
    let (loss, dq, dr) = contrastive_loss(&q, &r);
    let d = model.embed_dim;
    let mut grad_query = vec![0.0; model.query_projection.len()];
    let mut grad_passage = vec![0.0; model.passage_projection.len()];
    for (grad, xs, dv) in [(&mut grad_query, xq, &dq), (&mut grad_passage, xr, &dr)] {
        for (x, dvi) in xs.iter().zip(dv) {
            for &(f, xf) in x {
                for (gk, dk) in grad[f * d..(f + 1) * d].iter_mut().zip(dvi) {
                    *gk += xf * dk;
                }
            }
        }
    }
    LossAndGrads { loss, grad_query, grad_passage }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub features: FeatureConfig,
}

impl Default for DenseTrainConfig {
    fn default() -> Self {
        Self { batch_size: 32, lr: 2.0, epochs: 20, seed: 13, init_scale: 0.1, features: FeatureConfig::default() }
    }
}

pub struct TrainOutcome {
    pub model: DenseRankerModel,
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of every batch, in training order.
    pub batch_losses: Vec<f64>,
}

/// Plain SGD over shuffled mini-batches. A trailing batch of one pair has
/// no negatives and is merged into the batch before it.
pub fn dense_train(pairs: &[(Query, String)], config: &DenseTrainConfig) -> Result<TrainOutcome, RankerError> {
    if config.batch_size < 2 {
        return Err(RankerError::Config("batch size must be at least 2".into()));
    }
    if pairs.len() < 2 {
        return Err(RankerError::Config("training needs at least 2 pairs".into()));
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(RankerError::Config("learning rate must be positive".into()));
    }
    let mut model = DenseRankerModel::init(config.features.clone(), EMBED_DIM, config.init_scale, config.seed);
    model.validate()?;
    let xq: Vec<SparseVec> = pairs.iter().map(|(q, _)| config.features.features(&q.text())).collect();
    let xr: Vec<SparseVec> = pairs.iter().map(|(_, r)| config.features.features(r)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch_losses = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            batches.pop();
            let n = batches.len();
            batches[n - 1] = &order[(n - 1) * config.batch_size..];
        }
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let bq: Vec<SparseVec> = batch.iter().map(|&i| xq[i].clone()).collect();
            let br: Vec<SparseVec> = batch.iter().map(|&i| xr[i].clone()).collect();
            let step = batch_loss_and_grads(&model, &bq, &br);
            if !step.loss.is_finite() {
                return Err(RankerError::NonFinite { epoch, batch: bi, loss: step.loss });
            }
            for (w, g) in model.query_projection.iter_mut().zip(&step.grad_query) {
                *w -= config.lr * g;
            }
            for (w, g) in model.passage_projection.iter_mut().zip(&step.grad_passage) {
                *w -= config.lr * g;
            }
            total += step.loss;
            batch_losses.push(step.loss);
        }
        let mean = total / batches.len() as f64;
        log::debug!("dense epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model, epoch_losses, batch_losses })
}

/// Passages by dot product with the query.
pub fn dense_rank(model: &DenseRankerModel, instance: &Instance, k: usize) -> RankedPassages {
    let q = model.encode_query(&Query::from_instance(instance).text());
    let scores: Vec<f64> = instance.passages.iter().map(|p| dot(&q, &model.encode_passage(p))).collect();
    RankedPassages::from_scores(&scores, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_batch_loss() {
        let e = |i: usize| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let q: Vec<_> = (0..4).map(e).collect();
        let (loss, _, _) = contrastive_loss(&q, &q);
        let expected = -(1f64.exp() / (1f64.exp() + 3.0)).ln();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        let pairs = vec![(Query { entity: "a".into(), title: "t".into(), keys: vec![] }, "r".to_string()); 3];
        let cfg = DenseTrainConfig { batch_size: 1, ..Default::default() };
        assert!(matches!(dense_train(&pairs, &cfg), Err(RankerError::Config(_))));
        let cfg = DenseTrainConfig::default();
        assert!(dense_train(&pairs[..1], &cfg).is_err());
    }

    #[test]
    fn zero_model_ranks_by_index() {
        let m = DenseRankerModel::zeros(FeatureConfig { hash_dim: 8, ..Default::default() }, 4);
        let inst = crate::rankers::tests::instance(&["a", "b", "c"], "r");
        assert_eq!(dense_rank(&m, &inst, 3).order, vec![0, 1, 2]);
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let pairs: Vec<_> = (0..5)
            .map(|i| (Query { entity: format!("e{i}"), title: "t".into(), keys: vec![] }, format!("ref {i}")))
            .collect();
        let cfg = DenseTrainConfig {
            batch_size: 2,
            epochs: 1,
            features: FeatureConfig { hash_dim: 32, ..Default::default() },
            ..Default::default()
        };
        let out = dense_train(&pairs, &cfg).unwrap();
        assert_eq!(out.batch_losses.len(), 2);
    }
}
