//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use k2t_core::corpus::{tokenize, Instance, KeyValue};
use k2t_core::rankers::Query;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// A pronounceable lowercase pseudo-word.
pub fn pseudo_word(rng: &mut impl Rng, syllables: usize) -> String {
    (0..syllables).map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap())).collect()
}

/// `n` distinct pseudo-words not in `taken`.
pub fn fresh_words(rng: &mut impl Rng, n: usize, syllables: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng, syllables);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub struct Topic {
    pub title: String,
    pub keys: Vec<String>,
    pub content: Vec<String>,
}

pub fn topics(rng: &mut impl Rng, n: usize, taken: &mut HashSet<String>) -> Vec<Topic> {
    (0..n)
        .map(|_| Topic {
            title: fresh_words(rng, 1, 2, taken).remove(0),
            keys: fresh_words(rng, 5, 2, taken),
            content: fresh_words(rng, 30, 3, taken),
        })
        .collect()
}

fn bigrams(tokens: &[String]) -> HashSet<(String, String)> {
    tokens.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()
}

/// Sentences of `len` random topic words, each opened by the entity.
fn topic_sentences(rng: &mut impl Rng, entity: &str, topic: &Topic, n: usize, len: usize) -> Vec<String> {
    (0..n)
        .map(|_| {
            let words: Vec<&str> = topic.content.choose_multiple(rng, len).map(String::as_str).collect();
            format!("{entity} {}.", words.join(" "))
        })
        .collect()
}

/// 64-pair style topic corpus: each pair is a query (entity, topic title,
/// topic keys) and a reference of topic sentences about that entity.
pub struct TopicPairs {
    pub pairs: Vec<(Query, String)>,
    pub sentences: Vec<Vec<String>>,
}

pub fn topic_pairs(seed: u64, n: usize, n_topics: usize) -> TopicPairs {
    let mut rng = rng(seed);
    let mut taken = HashSet::new();
    let topics = topics(&mut rng, n_topics, &mut taken);
    let entities = fresh_words(&mut rng, n, 3, &mut taken);
    let mut pairs = Vec::new();
    let mut sentences = Vec::new();
    for (i, e) in entities.iter().enumerate() {
        let t = &topics[i % n_topics];
        let keys: Vec<String> = t.keys.choose_multiple(&mut rng, 3).cloned().collect();
        let s = topic_sentences(&mut rng, e, t, 5, 6);
        pairs.push((Query { entity: e.clone(), title: t.title.clone(), keys }, s.join(" ")));
        sentences.push(s);
    }
    TopicPairs { pairs, sentences }
}

/// Ranking instances over a topic-pair corpus: the pair's own sentences
/// plus sentences of `distractors` other pairs.
pub fn topic_instances(tp: &TopicPairs, seed: u64, distractors: usize) -> Vec<Instance> {
    let mut rng = rng(seed);
    let n = tp.pairs.len();
    (0..n)
        .map(|i| {
            let (q, reference) = &tp.pairs[i];
            let mut passages = tp.sentences[i].clone();
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect::<Vec<_>>().choose_multiple(&mut rng, distractors).copied().collect();
            for j in others {
                passages.push(tp.sentences[j].choose(&mut rng).unwrap().clone());
            }
            passages.shuffle(&mut rng);
            Instance {
                entity: q.entity.clone(),
                title: q.title.clone(),
                factual_keys: q.keys.iter().map(|k| KeyValue::new(k.clone(), "x")).collect(),
                topical_keys: vec![],
                passages,
                reference: reference.clone(),
            }
        })
        .collect()
}

/// Ranking corpus with deliberate redundancy. Each instance has 40
/// passages:
/// - 10 gold passages, one reference sentence each plus a query key and
///   filler; the only passages sharing bigrams with the reference;
/// - 5 near-duplicate "soup" passages: the reference's topic words with no
///   reference bigram;
/// - 25 keyword-stuffed passages in two near-duplicate clusters, repeating
///   query words between junk tokens.
pub struct RedundantCorpus {
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

pub fn redundant_corpus(seed: u64, n_train: usize, n_test: usize) -> RedundantCorpus {
    let mut rng = rng(seed);
    let mut taken = HashSet::new();
    let topics = topics(&mut rng, 8, &mut taken);
    let filler = fresh_words(&mut rng, 60, 2, &mut taken);
    let junk = fresh_words(&mut rng, 40, 2, &mut taken);
    let entities = fresh_words(&mut rng, n_train + n_test, 3, &mut taken);
    let mut all: Vec<Instance> = entities
        .iter()
        .enumerate()
        .map(|(i, e)| redundant_instance(&mut rng, e, &topics[i % topics.len()], &filler, &junk))
        .collect();
    let test = all.split_off(n_train);
    RedundantCorpus { train: all, test }
}

fn redundant_instance(rng: &mut ChaCha8Rng, entity: &str, topic: &Topic, filler: &[String], junk: &[String]) -> Instance {
    let keys: Vec<String> = topic.keys.choose_multiple(rng, 3).cloned().collect();
    let sentences = topic_sentences(rng, entity, topic, 10, 5);
    let reference = sentences.join(" ");
    let ref_bigrams = bigrams(tokenize(&reference).tokens());
    let mut passages = Vec::new();

    for s in &sentences {
        let fill: Vec<&str> = filler.choose_multiple(rng, 4).map(String::as_str).collect();
        let key = keys.choose(rng).unwrap();
        passages.push(format!("{} {key} {s}", fill.join(" ")));
    }

    let ref_words: Vec<String> = tokenize(&reference).into_inner().into_iter().filter(|t| t != "." && t != entity).collect();
    let soup = loop {
        let mut words: Vec<String> = ref_words.choose_multiple(rng, 18).cloned().collect();
        words.insert(0, entity.to_string());
        words.shuffle(rng);
        let toks = tokenize(&words.join(" "));
        if bigrams(toks.tokens()).is_disjoint(&ref_bigrams) {
            break words;
        }
    };
    for v in 0..5 {
        let mut w = soup.clone();
        w.swap(v, v + 1);
        let toks = tokenize(&w.join(" "));
        let text = if bigrams(toks.tokens()).is_disjoint(&ref_bigrams) { w.join(" ") } else { soup.join(" ") };
        passages.push(text);
    }

    let query_words: Vec<String> =
        std::iter::once(entity.to_string()).chain(std::iter::once(topic.title.clone())).chain(keys.iter().cloned()).collect();
    for cluster in 0..2 {
        let base: Vec<&str> = junk[cluster * 20..cluster * 20 + 20].iter().map(String::as_str).collect();
        for v in 0..(if cluster == 0 { 13 } else { 12 }) {
            let mut words = Vec::new();
            for (j, jw) in base.iter().enumerate().take(12) {
                words.push(query_words[(j + v) % query_words.len()].clone());
                words.push(jw.to_string());
            }
            words.push(base[12 + v % 8].to_string());
            passages.push(words.join(" "));
        }
    }
    passages.shuffle(rng);
    Instance {
        entity: entity.to_string(),
        title: topic.title.clone(),
        factual_keys: keys.iter().map(|k| KeyValue::new(k.clone(), "v")).collect(),
        topical_keys: vec![],
        passages,
        reference,
    }
}
