//! Seeded feature hashing. Stable across processes and platforms.

use std::hash::Hasher;

use fnv::FnvHasher;

pub(crate) fn hash_feature(seed: u64, feature: &str) -> u64 {
    let mut h = FnvHasher::with_key(0xcbf2_9ce4_8422_2325 ^ seed);
    h.write(feature.as_bytes());
    h.finish()
}

/// Sparse `(index, value)` features, sorted by index with duplicates merged.
pub type SparseVec = Vec<(usize, f64)>;

/// Hashes token unigrams and, optionally, character trigrams of each token
/// (with `<` `>` boundary marks) into `dim` signed buckets, then
/// L2-normalizes.
pub fn hashed_bag<'a, I>(tokens: I, dim: usize, char_trigrams: bool, seed: u64) -> SparseVec
where
    I: IntoIterator<Item = &'a String>,
{
    assert!(dim > 0, "feature dimension must be positive");
    let mut raw: Vec<(usize, f64)> = Vec::new();
    let mut add = |feature: &str| {
        let h = hash_feature(seed, feature);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        raw.push(((h % dim as u64) as usize, sign));
    };
    for token in tokens {
        add(&format!("w:{token}"));
        if char_trigrams {
            let marked: Vec<char> = format!("<{token}>").chars().collect();
            for tri in marked.windows(3) {
                add(&format!("c:{}", tri.iter().collect::<String>()));
            }
        }
    }
    raw.sort_by_key(|&(i, _)| i);
    let mut merged: SparseVec = Vec::with_capacity(raw.len());
    for (i, v) in raw {
        match merged.last_mut() {
            Some((j, acc)) if *j == i => *acc += v,
            _ => merged.push((i, v)),
        }
    }
    merged.retain(|&(_, v)| v != 0.0);
    let norm = merged.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut merged {
            *v /= norm;
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let toks: Vec<String> = ["obama", "was", "born"].iter().map(|s| s.to_string()).collect();
        let a = hashed_bag(&toks, 64, true, 7);
        let b = hashed_bag(&toks, 64, true, 7);
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(a.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(hashed_bag(&Vec::<String>::new(), 8, true, 0).is_empty());
    }
}
