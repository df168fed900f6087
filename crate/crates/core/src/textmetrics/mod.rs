//! Deterministic surface metrics over [`TokenSeq`]s.

mod parent;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, TokenSeq};

pub use parent::{parent, parent_with, CooccurrenceEntailment, EntailmentModel, WordOverlap};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("candidate and reference lists differ in length ({candidates} vs {references})")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("vector dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0} side has no vectors")]
    EmptySide(&'static str),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricScore {
    /// Builds a score from precision and recall, deriving the harmonic mean.
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        Self { precision, recall, f1: harmonic_mean(precision, recall) }
    }
}

/// `2pr / (p + r)`, or 0 when both are 0.
pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn clipped_overlap(cand: &HashMap<&[String], usize>, reference: &HashMap<&[String], usize>) -> usize {
    cand.iter()
        .map(|(gram, &c)| c.min(reference.get(gram).copied().unwrap_or(0)))
        .sum()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// ROUGE-N with clipped n-gram counts.
///
/// # Panics
/// If `n` is 0.
pub fn rouge_n(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> MetricScore {
    assert!(n >= 1, "rouge_n requires n >= 1");
    let cand = ngram_counts(candidate.tokens(), n);
    let refc = ngram_counts(reference.tokens(), n);
    let overlap = clipped_overlap(&cand, &refc);
    let cand_total = candidate.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    MetricScore::from_pr(ratio(overlap, cand_total), ratio(overlap, ref_total))
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> MetricScore {
    let lcs = lcs_len(candidate.tokens(), reference.tokens());
    MetricScore::from_pr(ratio(lcs, candidate.len()), ratio(lcs, reference.len()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BleuSmoothing {
    #[default]
    None,
    /// Adds one to the matched and total counts of every order above 1.
    AddOne,
}

/// Corpus-level BLEU: geometric mean of clipped n-gram precisions for
/// orders `1..=max_n`, times the brevity penalty.
pub fn bleu(
    candidates: &[TokenSeq],
    references: &[TokenSeq],
    max_n: usize,
    smoothing: BleuSmoothing,
) -> Result<f64, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if max_n == 0 {
        return Err(MetricError::Parameter("max_n must be at least 1".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, reference) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=max_n {
            let c = ngram_counts(cand.tokens(), n);
            let r = ngram_counts(reference.tokens(), n);
            matched[n - 1] += clipped_overlap(&c, &r);
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let (m, t) = match smoothing {
            BleuSmoothing::AddOne if n > 0 => (matched[n] + 1, totals[n] + 1),
            _ => (matched[n], totals[n]),
        };
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let brevity = if cand_len < ref_len { (1.0 - ref_len as f64 / cand_len as f64).exp() } else { 1.0 };
    Ok(brevity * (log_sum / max_n as f64).exp())
}

/// Sentence BLEU: corpus BLEU over a single pair.
pub fn sentence_bleu(candidate: &TokenSeq, reference: &TokenSeq, max_n: usize, smoothing: BleuSmoothing) -> f64 {
    bleu(std::slice::from_ref(candidate), std::slice::from_ref(reference), max_n, smoothing)
        .unwrap_or(0.0)
}

/// Token-level F1 between two answer strings (multiset overlap).
pub fn token_f1(gold: &str, predicted: &str) -> f64 {
    let gold = tokenize(gold);
    let pred = tokenize(predicted);
    match (gold.is_empty(), pred.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let unigram = rouge_n(&pred, &gold, 1);
    unigram.f1
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// BERTScore from precomputed token vectors, without idf weighting.
///
/// Precision averages, over candidate tokens, the best cosine similarity to
/// any reference token; recall does the same from the reference side. Each
/// best similarity is clamped into `[0, 1]`.
pub fn bertscore_from_vectors(cand: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<MetricScore, MetricError> {
    if cand.is_empty() {
        return Err(MetricError::EmptySide("candidate"));
    }
    if reference.is_empty() {
        return Err(MetricError::EmptySide("reference"));
    }
    let dim = cand[0].len();
    if let Some(v) = cand.iter().chain(reference).find(|v| v.len() != dim) {
        return Err(MetricError::DimensionMismatch { expected: dim, found: v.len() });
    }
    let sims: Vec<Vec<f64>> = cand
        .iter()
        .map(|c| reference.iter().map(|r| cosine(c, r)).collect())
        .collect();
    let precision = sims
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0))
        .sum::<f64>()
        / cand.len() as f64;
    let recall = (0..reference.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0))
        .sum::<f64>()
        / reference.len() as f64;
    Ok(MetricScore::from_pr(precision, recall))
}
