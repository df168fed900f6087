//! Request format and output parsing for a generative index-sequence ranker
//! served by the generate backend.

use super::{RankedPassages, RankerError};
use crate::backends::TextGenerator;
use crate::corpus::Instance;
use crate::descriptor::keys_segment;

/// One request string per passage, indices 0-based.
pub fn neural_inputs(instance: &Instance) -> Vec<String> {
    let head = format!("question: [Entity] {} [Title] {} [Keys] {}", instance.entity, instance.title, keys_segment(instance));
    instance.passages.iter().enumerate().map(|(i, p)| format!("{head} index: {i} context: {p}")).collect()
}

/// Reads a whitespace-separated index sequence. Out-of-range and repeated
/// indices are dropped; if fewer than `min(k, n)` remain, the unused indices
/// follow in ascending order with score 0. Generated indices score
/// `(m - j) / m` at position `j` of `m`.
pub fn parse_index_sequence(text: &str, n: usize, k: usize) -> Result<RankedPassages, RankerError> {
    let mut seen = vec![false; n];
    let mut order = Vec::new();
    for tok in text.split_whitespace() {
        let tok = tok.trim_matches(|c: char| !c.is_ascii_digit());
        if tok.is_empty() {
            continue;
        }
        let i: usize = tok.parse().map_err(|_| RankerError::Parse(format!("`{tok}` is not an index")))?;
        if i < n && !seen[i] {
            seen[i] = true;
            order.push(i);
        }
    }
    let want = k.min(n);
    order.truncate(want);
    let m = order.len();
    let mut scores: Vec<f64> = (0..m).map(|j| (m - j) as f64 / m as f64).collect();
    for i in (0..n).filter(|&i| !seen[i]) {
        if order.len() >= want {
            break;
        }
        order.push(i);
        scores.push(0.0);
    }
    Ok(RankedPassages { order, scores, k, num_passages: n })
}

pub fn neural_rank(
    instance: &Instance,
    k: usize,
    backend: &dyn TextGenerator,
    max_tokens: usize,
) -> Result<RankedPassages, RankerError> {
    let out = backend.generate(&neural_inputs(instance), max_tokens)?;
    if out.truncated {
        log::warn!("ranker output for `{}` was truncated at {max_tokens} tokens", instance.entity);
    }
    parse_index_sequence(&out.text, instance.passages.len(), k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_and_padding() {
        let r = parse_index_sequence("3 1 3 9 1", 5, 4).unwrap();
        assert_eq!(r.order, vec![3, 1, 0, 2]);
        assert_eq!(r.scores, vec![1.0, 0.5, 0.0, 0.0]);
        r.check().unwrap();
        let r = parse_index_sequence("", 3, 10).unwrap();
        assert_eq!(r.order, vec![0, 1, 2]);
        assert!(parse_index_sequence("1 2x3", 5, 2).is_err());
    }

    #[test]
    fn inputs_format() {
        let inst = crate::rankers::tests::instance(&["p zero", "p one"], "r");
        let inputs = neural_inputs(&inst);
        assert_eq!(inputs[1], "question: [Entity] obama [Title] life [Keys] birth +  index: 1 context: p one");
    }
}
