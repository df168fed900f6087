//! Answer spans and the rule-based span extractor.

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_with_offsets, OffsetToken};

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers",
    "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of",
    "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over", "own", "same",
    "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "whose", "why", "will", "with", "would", "you", "your", "yours",
    "'s",
];

const CONNECTORS: &[&str] = &["of", "de", "da", "del", "la", "le", "von", "van", "der", "du", "and", "for", "the"];

const MONTHS: &[&str] = &[
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep",
    "sept", "oct", "nov", "dec",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

pub(crate) fn is_punctuation(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Named,
    Numeric,
    Chunk,
    /// Supplied by a remote extractor that does not classify spans.
    Other,
}

/// An answer span inside a sentence. Offsets are in characters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub sentence: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub kind: SpanKind,
}

impl AnswerSpan {
    /// Validates character offsets against `sentence`.
    pub fn new(sentence: &str, start: usize, end: usize, kind: SpanKind) -> Result<Self, String> {
        let len = sentence.chars().count();
        if start >= end || end > len {
            return Err(format!("span [{start}, {end}) does not lie inside a sentence of {len} characters"));
        }
        let surface: String = sentence.chars().skip(start).take(end - start).collect();
        if surface.trim().is_empty() {
            return Err("span surface is blank".into());
        }
        Ok(Self { sentence: sentence.to_string(), start, end, surface, kind })
    }

    pub(crate) fn from_bytes(sentence: &str, start: usize, end: usize, kind: SpanKind) -> Self {
        let cs = sentence[..start].chars().count();
        let ce = cs + sentence[start..end].chars().count();
        Self {
            sentence: sentence.to_string(),
            start: cs,
            end: ce,
            surface: sentence[start..end].to_string(),
            kind,
        }
    }

    /// Byte range of the span in `self.sentence`.
    pub fn byte_range(&self) -> (usize, usize) {
        char_to_byte_range(&self.sentence, self.start, self.end)
    }
}

pub(crate) fn char_to_byte_range(text: &str, start: usize, end: usize) -> (usize, usize) {
    let byte_at = |n: usize| text.char_indices().nth(n).map_or(text.len(), |(b, _)| b);
    (byte_at(start), byte_at(end))
}

fn is_numeric(tok: &OffsetToken) -> bool {
    let t = tok.norm.as_str();
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    digits > 0 && (digits == t.len() || matches!(&t[digits..], "st" | "nd" | "rd" | "th" | "s"))
}

fn is_month(tok: &OffsetToken) -> bool {
    MONTHS.contains(&tok.norm.as_str())
}

fn is_capitalized(tok: &OffsetToken, text: &str) -> bool {
    tok.surface(text).chars().next().is_some_and(char::is_uppercase)
}

/// Rule-based span extraction: numbers and dates, maximal runs of
/// capitalized tokens, and stopword-delimited lowercase chunks.
///
/// Spans are deduplicated by surface and ordered by start offset.
pub fn rule_based_spans(sentence: &str) -> Vec<AnswerSpan> {
    let toks = tokenize_with_offsets(sentence);
    let mut used = vec![false; toks.len()];
    let mut found: Vec<(usize, usize, SpanKind)> = Vec::new();

    // Numbers and dates: numerals and month names, optionally joined by a
    // single separator such as "," or "/".
    let mut i = 0;
    while i < toks.len() {
        if !(is_numeric(&toks[i]) || is_month(&toks[i])) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        loop {
            if j < toks.len() && (is_numeric(&toks[j]) || is_month(&toks[j])) {
                j += 1;
            } else if j + 1 < toks.len()
                && matches!(toks[j].norm.as_str(), "," | "/" | "-" | ".")
                && (is_numeric(&toks[j + 1]) || is_month(&toks[j + 1]))
            {
                j += 2;
            } else {
                break;
            }
        }
        if toks[i..j].iter().any(is_numeric) {
            found.push((i, j, SpanKind::Numeric));
            used[i..j].iter_mut().for_each(|u| *u = true);
        }
        i = j;
    }

    // Capitalized runs, allowing lowercase connectors between capitals.
    let mut i = 0;
    while i < toks.len() {
        if used[i] || !is_capitalized(&toks[i], sentence) || is_stopword(&toks[i].norm) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        loop {
            if j < toks.len() && !used[j] && is_capitalized(&toks[j], sentence) {
                j += 1;
            } else if j + 1 < toks.len()
                && CONNECTORS.contains(&toks[j].norm.as_str())
                && !used[j + 1]
                && is_capitalized(&toks[j + 1], sentence)
            {
                j += 2;
            } else {
                break;
            }
        }
        found.push((i, j, SpanKind::Named));
        used[i..j].iter_mut().for_each(|u| *u = true);
        i = j;
    }

    // Lowercase content chunks delimited by stopwords and punctuation.
    let mut i = 0;
    while i < toks.len() {
        let chunk_tok = |t: &OffsetToken, u: bool| {
            !u && !is_stopword(&t.norm) && t.norm.chars().all(char::is_alphabetic)
        };
        if !chunk_tok(&toks[i], used[i]) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < toks.len() && chunk_tok(&toks[j], used[j]) {
            j += 1;
        }
        if j - i > 1 || toks[i].norm.chars().count() >= 3 {
            found.push((i, j, SpanKind::Chunk));
        }
        i = j;
    }

    found.sort_by_key(|&(i, _, _)| toks[i].start);
    let mut seen = std::collections::HashSet::new();
    found
        .into_iter()
        .map(|(i, j, kind)| AnswerSpan::from_bytes(sentence, toks[i].start, toks[j - 1].end, kind))
        .filter(|s| seen.insert(s.surface.clone()))
        .collect()
}
