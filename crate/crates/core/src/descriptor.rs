//! Description generation: the extractive QA baseline and the input format
//! for abstractive generators.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends, QaAnswer, TextGenerator};
use crate::corpus::{split_sentences, Instance};
use crate::rankers::RankedPassages;

pub const PASSAGE_SEPARATOR: &str = "[SEP]";
pub const DEFAULT_MAX_INPUT_TOKENS: usize = 512;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("instance `{0}` has no factual keys")]
    NoFactualKeys(String),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("generation backend failed for input `{request}`: {source}")]
    Backend {
        request: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Qa(#[from] BackendError),
}

/// `"{factual keys} + {topical keys}"`, each side space-joined.
pub fn keys_segment(instance: &Instance) -> String {
    let factual: Vec<&str> = instance.key_names().collect();
    format!("{} + {}", factual.join(" "), instance.topical_keys.join(" "))
}

#[derive(Clone, Debug)]
pub struct GenerationRequest<'a> {
    pub instance: &'a Instance,
    pub ranked: &'a RankedPassages,
    pub k: usize,
}

impl<'a> GenerationRequest<'a> {
    pub fn new(instance: &'a Instance, ranked: &'a RankedPassages, k: usize) -> Result<Self, DescriptorError> {
        if k > ranked.order.len() {
            return Err(DescriptorError::Request(format!("k = {k} exceeds {} ranked passages", ranked.order.len())));
        }
        if let Some(i) = ranked.order.iter().find(|&&i| i >= instance.passages.len()) {
            return Err(DescriptorError::Request(format!("ranked index {i} out of range")));
        }
        Ok(Self { instance, ranked, k })
    }

    pub fn passages(&self) -> impl Iterator<Item = &'a str> + '_ {
        self.ranked.order[..self.k].iter().map(|&i| self.instance.passages[i].as_str())
    }
}

/// `[Entity] e [Title] t [Keys] fk + tk [docs] p1 [SEP] p2 ...`
pub fn serialize_input(req: &GenerationRequest) -> String {
    let sep = format!(" {PASSAGE_SEPARATOR} ");
    let docs: Vec<&str> = req.passages().collect();
    format!(
        "[Entity] {} [Title] {} [Keys] {} [docs] {}",
        req.instance.entity,
        req.instance.title,
        keys_segment(req.instance),
        docs.join(&sep)
    )
}

/// Fields recovered from a serialized input. Keys come back as
/// whitespace-separated tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedInput {
    pub entity: String,
    pub title: String,
    pub factual_keys: Vec<String>,
    pub topical_keys: Vec<String>,
    pub passages: Vec<String>,
}

pub fn parse_input(text: &str) -> Option<ParsedInput> {
    let rest = text.strip_prefix("[Entity] ")?;
    let (entity, rest) = rest.split_once(" [Title] ")?;
    let (title, rest) = rest.split_once(" [Keys] ")?;
    let (keys, docs) = rest.split_once(" [docs] ")?;
    let (factual, topical) = keys.split_once(" + ")?;
    let sep = format!(" {PASSAGE_SEPARATOR} ");
    let passages = if docs.is_empty() { Vec::new() } else { docs.split(&sep).map(str::to_string).collect() };
    let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    Some(ParsedInput {
        entity: entity.to_string(),
        title: title.to_string(),
        factual_keys: words(factual),
        topical_keys: words(topical),
        passages,
    })
}

/// Keeps at most `max_tokens` whitespace tokens; reports whether anything
/// was cut.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> (String, bool) {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max_tokens {
        (text.to_string(), false)
    } else {
        (words[..max_tokens].join(" "), true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyEvidence {
    pub key: String,
    pub question: String,
    pub answer: Option<String>,
    pub passage: Option<usize>,
    pub confidence: f64,
    pub sentence: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractiveOutput {
    pub text: String,
    pub sentences: Vec<String>,
    pub evidence: Vec<KeyEvidence>,
    /// Every key question was unanswerable.
    pub all_unanswerable: bool,
}

fn containing_sentence<'a>(passage: &'a str, answer: &str) -> Option<&'a str> {
    let sentences = split_sentences(passage);
    sentences
        .iter()
        .find(|s| s.contains(answer))
        .or_else(|| {
            let lower = answer.to_lowercase();
            sentences.iter().find(|s| s.to_lowercase().contains(&lower))
        })
        .copied()
}

/// For each factual key, asks an entity+key question of every passage
/// separately and keeps the sentence holding the most confident answer.
/// Sentences are verbatim passage slices, deduplicated, in key order.
pub fn extractive_generate(instance: &Instance, backends: &Backends) -> Result<ExtractiveOutput, DescriptorError> {
    if instance.factual_keys.is_empty() {
        return Err(DescriptorError::NoFactualKeys(instance.entity.clone()));
    }
    let mut evidence = Vec::new();
    for key in instance.key_names() {
        let question = backends.qg.key_question(&instance.entity, key)?;
        let answers: Vec<QaAnswer> = instance
            .passages
            .par_iter()
            .map(|p| crate::mafe::answer_question(&question, p, backends))
            .collect::<Result<_, _>>()?;
        let mut best: Option<(usize, &QaAnswer)> = None;
        for (i, a) in answers.iter().enumerate() {
            if a.text().is_some() && best.is_none_or(|(_, b)| a.confidence > b.confidence) {
                best = Some((i, a));
            }
        }
        let sentence = best.and_then(|(i, a)| containing_sentence(&instance.passages[i], &a.answer));
        if best.is_some() && sentence.is_none() {
            log::warn!("answer for `{key}` not found verbatim in its passage; skipped");
        }
        evidence.push(KeyEvidence {
            key: key.to_string(),
            question,
            answer: best.map(|(_, a)| a.answer.clone()),
            passage: best.map(|(i, _)| i),
            confidence: best.map_or(0.0, |(_, a)| a.confidence),
            sentence: sentence.map(str::to_string),
        });
    }
    let mut sentences: Vec<String> = Vec::new();
    for s in evidence.iter().filter_map(|e| e.sentence.as_ref()) {
        if !sentences.contains(s) {
            sentences.push(s.clone());
        }
    }
    let all_unanswerable = evidence.iter().all(|e| e.answer.is_none());
    if all_unanswerable {
        log::warn!("no factual key of `{}` could be answered", instance.entity);
    }
    Ok(ExtractiveOutput { text: sentences.join(" "), sentences, evidence, all_unanswerable })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractiveOutput {
    pub text: String,
    /// The serialized input exceeded the input budget and was cut.
    pub input_truncated: bool,
    /// The backend stopped at its output budget.
    pub output_truncated: bool,
}

pub fn abstractive_generate(
    req: &GenerationRequest,
    backend: &dyn TextGenerator,
    max_input_tokens: usize,
    max_tokens: usize,
) -> Result<AbstractiveOutput, DescriptorError> {
    let (input, input_truncated) = truncate_tokens(&serialize_input(req), max_input_tokens);
    let out = backend
        .generate(std::slice::from_ref(&input), max_tokens)
        .map_err(|source| DescriptorError::Backend { request: input.clone(), source })?;
    Ok(AbstractiveOutput { text: out.text, input_truncated, output_truncated: out.truncated })
}
