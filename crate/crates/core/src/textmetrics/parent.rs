//! PARENT-style scoring against both a reference and a set of factual
//! triples.

use std::collections::{HashMap, HashSet};

use crate::corpus::{linearize_triple, tokenize, FactualTriple, TokenSeq};

use super::{lcs_len, ngram_counts, MetricError, MetricScore};

/// Probability that a single token is entailed by the table.
pub trait EntailmentModel: Send + Sync {
    fn token_prob(&self, token: &str, table: &HashSet<String>) -> f64;
}

/// A token is entailed iff it occurs in the table.
#[derive(Clone, Copy, Debug, Default)]
pub struct WordOverlap;

impl EntailmentModel for WordOverlap {
    fn token_prob(&self, token: &str, table: &HashSet<String>) -> f64 {
        if table.contains(token) {
            1.0
        } else {
            0.0
        }
    }
}

/// Co-occurrence entailment: a token found in the table is entailed with
/// probability 1, otherwise with the best `P(token in text | t in table)`
/// over the table tokens `t`, estimated from (table, text) pairs.
#[derive(Clone, Debug, Default)]
pub struct CooccurrenceEntailment {
    table_counts: HashMap<String, usize>,
    joint: HashMap<(String, String), usize>,
}

impl CooccurrenceEntailment {
    pub fn fit<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a [FactualTriple], &'a TokenSeq)>,
    {
        let mut model = Self::default();
        for (triples, text) in pairs {
            let table = table_tokens(triples);
            let words: HashSet<&String> = text.iter().collect();
            for t in &table {
                *model.table_counts.entry(t.clone()).or_insert(0) += 1;
                for w in &words {
                    *model.joint.entry((t.clone(), (*w).clone())).or_insert(0) += 1;
                }
            }
        }
        model
    }
}

impl EntailmentModel for CooccurrenceEntailment {
    fn token_prob(&self, token: &str, table: &HashSet<String>) -> f64 {
        if table.contains(token) {
            return 1.0;
        }
        table
            .iter()
            .filter_map(|t| {
                let n = *self.table_counts.get(t)?;
                let joint = self.joint.get(&(t.clone(), token.to_string())).copied().unwrap_or(0);
                Some(joint as f64 / n as f64)
            })
            .fold(0.0, f64::max)
    }
}

fn table_tokens(triples: &[FactualTriple]) -> HashSet<String> {
    triples
        .iter()
        .flat_map(|t| tokenize(&linearize_triple(t)).into_inner())
        .collect()
}

fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// PARENT with word-overlap entailment.
pub fn parent(
    candidate: &TokenSeq,
    reference: &TokenSeq,
    triples: &[FactualTriple],
    lambda: f64,
    max_n: usize,
) -> Result<MetricScore, MetricError> {
    parent_with(candidate, reference, triples, lambda, max_n, &WordOverlap)
}

/// PARENT with a caller-supplied entailment model.
///
/// Precision credits each candidate n-gram with the larger of its clipped
/// reference match and its table entailment probability. Recall combines
/// the entailment-weighted reference recall with the fraction of triple
/// values whose LCS with the candidate covers at least half the value:
/// `R_ref^lambda * R_table^(1 - lambda)`. Without triples the table is
/// empty and recall is plain reference recall.
pub fn parent_with(
    candidate: &TokenSeq,
    reference: &TokenSeq,
    triples: &[FactualTriple],
    lambda: f64,
    max_n: usize,
    model: &dyn EntailmentModel,
) -> Result<MetricScore, MetricError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MetricError::Parameter(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if max_n == 0 {
        return Err(MetricError::Parameter("max_n must be at least 1".into()));
    }
    let table = table_tokens(triples);
    let entail = |gram: &[String]| -> f64 {
        gram.iter().map(|t| model.token_prob(t, &table)).sum::<f64>() / gram.len() as f64
    };

    let mut precisions = Vec::with_capacity(max_n);
    let mut recalls = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let cand = ngram_counts(candidate.tokens(), n);
        let refc = ngram_counts(reference.tokens(), n);

        let cand_total: usize = cand.values().sum();
        let credit: f64 = cand
            .iter()
            .map(|(gram, &c)| {
                let in_ref = refc.get(gram).map_or(0.0, |&r| (r as f64 / c as f64).min(1.0));
                c as f64 * in_ref.max(entail(gram))
            })
            .sum();
        precisions.push(if cand_total == 0 { 0.0 } else { credit / cand_total as f64 });

        let weighted = |weight: &dyn Fn(&[String]) -> f64| -> (f64, f64) {
            refc.iter().fold((0.0, 0.0), |(num, den), (gram, &r)| {
                let w = r as f64 * weight(gram);
                let in_cand = cand.get(gram).map_or(0.0, |&c| (c as f64 / r as f64).min(1.0));
                (num + w * in_cand, den + w)
            })
        };
        let (mut num, mut den) = if table.is_empty() { (0.0, 0.0) } else { weighted(&entail) };
        if den == 0.0 {
            (num, den) = weighted(&|_| 1.0);
        }
        recalls.push(if den == 0.0 { 0.0 } else { num / den });
    }

    let precision = geometric_mean(&precisions);
    let ref_recall = geometric_mean(&recalls);
    let recall = if triples.is_empty() {
        ref_recall
    } else {
        let values: Vec<TokenSeq> =
            triples.iter().map(|t| tokenize(t.value())).filter(|v| !v.is_empty()).collect();
        let covered = values
            .iter()
            .filter(|v| lcs_len(v.tokens(), candidate.tokens()) as f64 / v.len() as f64 >= 0.5)
            .count();
        let table_recall = if values.is_empty() { 0.0 } else { covered as f64 / values.len() as f64 };
        ref_recall.powf(lambda) * table_recall.powf(1.0 - lambda)
    };
    Ok(MetricScore::from_pr(precision, recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn seq(text: &str) -> TokenSeq {
        tokenize(text)
    }

    fn triple(e: &str, k: &str, v: &str) -> FactualTriple {
        FactualTriple::new(e, k, v).unwrap()
    }

    #[test]
    fn saturation() {
        let t = [triple("Obama", "birthplace", "Hawaii")];
        let s = parent(&seq("obama was born in hawaii"), &seq("obama was born in hawaii"), &t, 0.5, 2).unwrap();
        assert_abs_diff_eq!(s.precision, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.recall, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        let t = [triple("Obama", "birthplace", "Hawaii")];
        let s = parent(&seq("x y z"), &seq("obama was born in hawaii"), &t, 0.5, 2).unwrap();
        assert_eq!(s, MetricScore::default());
    }

    #[test]
    fn no_triples_falls_back_to_reference() {
        let s = parent(&seq("a b c"), &seq("a b c d"), &[], 0.5, 1).unwrap();
        assert_abs_diff_eq!(s.precision, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.recall, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn lambda_out_of_range() {
        assert!(parent(&seq("a"), &seq("a"), &[], 1.5, 1).is_err());
    }

    #[test]
    fn cooccurrence_entails_paraphrase() {
        let t = vec![triple("X", "occupation", "wrestler")];
        let text = seq("x was a professional wrestler");
        let model = CooccurrenceEntailment::fit([(t.as_slice(), &text)]);
        let table = table_tokens(&t);
        assert_eq!(model.token_prob("wrestler", &table), 1.0);
        assert_eq!(model.token_prob("professional", &table), 1.0);
        assert_eq!(model.token_prob("unseen", &table), 0.0);
    }
}
