//! Deterministic in-process stand-ins for every model service.

use std::collections::HashSet;

use crate::corpus::{humanize_key, split_sentences, tokenize, tokenize_with_offsets};
use crate::hashing::{hash_feature, hashed_bag};
use crate::mafe::{is_stopword, rule_based_spans, SpanKind};
use crate::mafe::spans::{char_to_byte_range, is_punctuation};

use super::{
    BackendError, BackendResult, Embedder, Generation, NliLabel, NliModel, NliVerdict, QaAnswer,
    QuestionAnswerer, QuestionGenerator, SpanExtractor, TextGenerator,
};

const QUESTION_WORDS: &[&str] = &["what", "who", "whom", "whose", "which", "when", "where", "why", "how", "answer", "mentioned"];
const EMBED_SEED: u64 = 0x6b32_745f_656d_6264;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedderKind {
    /// One-hot hashed token identity: identical tokens have cosine 1,
    /// different tokens 0 up to hash collisions.
    Exact,
    /// Signed hashed character trigrams; related word forms get partial
    /// similarity.
    Trigram,
}

/// Template question generation, lexical QA, rule-based NLI, hashed
/// embeddings, rule-based spans and echo generation.
#[derive(Clone, Debug)]
pub struct MockBackend {
    /// Minimum fraction of question content words found in the best context
    /// sentence for a question to count as answerable.
    pub qa_threshold: f64,
    pub embedder: EmbedderKind,
    pub exact_dim: usize,
    pub trigram_dim: usize,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self { qa_threshold: 0.3, embedder: EmbedderKind::Exact, exact_dim: 4096, trigram_dim: 256 }
    }
}

impl MockBackend {
    pub fn with_embedder(embedder: EmbedderKind) -> Self {
        Self { embedder, ..Self::default() }
    }

    pub fn embed_dim(&self) -> usize {
        match self.embedder {
            EmbedderKind::Exact => self.exact_dim,
            EmbedderKind::Trigram => self.trigram_dim,
        }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let dim = self.embed_dim();
        match self.embedder {
            EmbedderKind::Exact => {
                let mut v = vec![0.0; dim];
                v[(hash_feature(EMBED_SEED, token) % dim as u64) as usize] = 1.0;
                v
            }
            EmbedderKind::Trigram => {
                let mut v = vec![0.0; dim];
                let tok = vec![token.to_string()];
                for (i, x) in hashed_bag(&tok, dim, true, EMBED_SEED) {
                    v[i] = x;
                }
                v
            }
        }
    }
}

impl QuestionGenerator for MockBackend {
    fn question(&self, sentence: &str, start: usize, end: usize) -> BackendResult<String> {
        let len = sentence.chars().count();
        if start >= end || end > len {
            return Err(BackendError::InvalidRequest(format!(
                "span [{start}, {end}) outside sentence of {len} characters"
            )));
        }
        let (bs, be) = char_to_byte_range(sentence, start, end);
        let blanked = format!("{}___{}", &sentence[..bs], &sentence[be..]);
        let body = blanked.trim().trim_end_matches(['.', '?', '!']).trim_end();
        Ok(format!("What is the answer mentioned in: {body}?"))
    }

    fn key_question(&self, entity: &str, key: &str) -> BackendResult<String> {
        Ok(format!("What is the {} of {}?", humanize_key(key), entity.trim()))
    }
}

impl QuestionAnswerer for MockBackend {
    /// Picks the context sentence sharing the most question content words,
    /// then returns the extracted span from it that repeats the fewest
    /// question words, then the one closest to the words around a blank,
    /// then named and numeric spans before plain chunks. Question words are
    /// trimmed from its edges.
    fn answer(&self, question: &str, context: &str) -> BackendResult<QaAnswer> {
        if context.trim().is_empty() {
            return Ok(QaAnswer::unanswerable(0.0));
        }
        let q_all: HashSet<String> = tokenize(question).into_inner().into_iter().collect();
        let q_content: HashSet<&String> = q_all
            .iter()
            .filter(|t| !is_punctuation(t) && !is_stopword(t) && !QUESTION_WORDS.contains(&t.as_str()))
            .collect();
        if q_content.is_empty() {
            return Ok(QaAnswer::unanswerable(0.0));
        }

        let mut best: Option<(f64, &str)> = None;
        for sentence in split_sentences(context) {
            let toks: HashSet<String> = tokenize(sentence).into_inner().into_iter().collect();
            let overlap = q_content.iter().filter(|t| toks.contains(**t)).count() as f64 / q_content.len() as f64;
            if best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, sentence));
            }
        }
        let Some((overlap, sentence)) = best else {
            return Ok(QaAnswer::unanswerable(0.0));
        };
        if overlap < self.qa_threshold {
            return Ok(QaAnswer::unanswerable(overlap));
        }

        let priority = |k: SpanKind| match k {
            SpanKind::Named | SpanKind::Numeric => 0,
            SpanKind::Chunk | SpanKind::Other => 1,
        };
        let toks = tokenize_with_offsets(sentence);
        let anchors = cloze_anchors(question);
        let chosen = rule_based_spans(sentence)
            .into_iter()
            .filter_map(|span| {
                let (surface, in_q) = trim_question_words(&span.surface, &q_all)?;
                let gap = anchor_gap(sentence, &toks, &span, &anchors);
                (in_q < 1.0).then_some((in_q, gap, priority(span.kind), span.start, surface))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
        Ok(match chosen {
            Some((in_q, _, _, _, surface)) => QaAnswer {
                answer: surface,
                unanswerable: false,
                confidence: overlap * (1.0 - in_q),
            },
            None => QaAnswer::unanswerable(overlap),
        })
    }
}

/// For a blanked question, the nearest content token on each side of the
/// blank.
fn cloze_anchors(question: &str) -> (Option<String>, Option<String>) {
    let Some((left, right)) = question.split_once("___") else {
        return (None, None);
    };
    let left = left.rsplit_once(':').map_or(left, |(_, l)| l);
    let content = |t: &String| !is_punctuation(t) && !is_stopword(t);
    (
        tokenize(left).into_inner().into_iter().rev().find(content),
        tokenize(right).into_inner().into_iter().find(content),
    )
}

/// Tokens between the span and the closest anchor occurrence on the
/// matching side; `usize::MAX` without one.
fn anchor_gap(
    sentence: &str,
    toks: &[crate::corpus::OffsetToken],
    span: &crate::mafe::AnswerSpan,
    anchors: &(Option<String>, Option<String>),
) -> usize {
    let (bs, be) = char_to_byte_range(sentence, span.start, span.end);
    let Some(first) = toks.iter().position(|t| t.start >= bs) else {
        return usize::MAX;
    };
    let after = toks.iter().position(|t| t.start >= be).unwrap_or(toks.len());
    let left = anchors.0.as_ref().and_then(|a| toks[..first].iter().rposition(|t| &t.norm == a).map(|p| first - p - 1));
    let right = anchors.1.as_ref().and_then(|a| toks[after..].iter().position(|t| &t.norm == a));
    left.into_iter().chain(right).min().unwrap_or(usize::MAX)
}

/// Strips question words and punctuation from both ends of a span. Returns
/// the trimmed surface and the fraction of its remaining tokens that occur
/// in the question.
fn trim_question_words(surface: &str, question: &HashSet<String>) -> Option<(String, f64)> {
    let toks = tokenize_with_offsets(surface);
    let keep = |t: &&crate::corpus::OffsetToken| !is_punctuation(&t.norm) && !question.contains(&t.norm);
    let first = toks.iter().position(|t| keep(&t))?;
    let last = toks.iter().rposition(|t| keep(&t))?;
    let inner = &toks[first..=last];
    let words: Vec<_> = inner.iter().filter(|t| !is_punctuation(&t.norm)).collect();
    let in_q = words.iter().filter(|t| question.contains(&t.norm)).count() as f64 / words.len() as f64;
    Some((surface[inner[0].start..inner[inner.len() - 1].end].to_string(), in_q))
}

impl NliModel for MockBackend {
    /// Identical token sequences entail. After the shared prefix (the
    /// question), token-disjoint remainders contradict. Anything else is
    /// neutral.
    fn nli(&self, premise: &str, hypothesis: &str) -> BackendResult<NliVerdict> {
        let p = tokenize(premise).into_inner();
        let h = tokenize(hypothesis).into_inner();
        let label = if p == h {
            NliLabel::Entailment
        } else {
            let shared = p.iter().zip(&h).take_while(|(a, b)| a == b).count();
            let rest_p: HashSet<&String> = p[shared..].iter().collect();
            let disjoint = h[shared..].iter().all(|t| !rest_p.contains(t));
            if shared > 0 && disjoint && !rest_p.is_empty() && shared < h.len() {
                NliLabel::Contradiction
            } else {
                NliLabel::Neutral
            }
        };
        let probs = match label {
            NliLabel::Entailment => [0.98, 0.01, 0.01],
            NliLabel::Neutral => [0.1, 0.8, 0.1],
            NliLabel::Contradiction => [0.01, 0.01, 0.98],
        };
        Ok(NliVerdict { label, probs })
    }
}

impl Embedder for MockBackend {
    fn embed_tokens(&self, texts: &[String]) -> BackendResult<Vec<Vec<Vec<f64>>>> {
        Ok(texts
            .iter()
            .map(|t| tokenize(t).iter().map(|tok| self.token_vector(tok)).collect())
            .collect())
    }

    fn embed_sequences(&self, texts: &[String]) -> BackendResult<Vec<Vec<f64>>> {
        let dim = self.embed_dim();
        Ok(self
            .embed_tokens(texts)?
            .into_iter()
            .map(|vecs| {
                let mut pooled = vec![0.0; dim];
                for v in &vecs {
                    pooled.iter_mut().zip(v).for_each(|(p, x)| *p += x);
                }
                let norm = pooled.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    pooled.iter_mut().for_each(|p| *p /= norm);
                }
                pooled
            })
            .collect())
    }
}

impl SpanExtractor for MockBackend {
    fn spans(&self, sentence: &str) -> BackendResult<Vec<(usize, usize)>> {
        Ok(rule_based_spans(sentence).into_iter().map(|s| (s.start, s.end)).collect())
    }
}

impl TextGenerator for MockBackend {
    /// Echoes the inputs, one per line, cut at `max_tokens` whitespace
    /// tokens.
    fn generate(&self, inputs: &[String], max_tokens: usize) -> BackendResult<Generation> {
        let text = inputs.join("\n");
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() > max_tokens {
            return Ok(Generation { text: words[..max_tokens].join(" "), truncated: true });
        }
        Ok(Generation { text, truncated: false })
    }
}
