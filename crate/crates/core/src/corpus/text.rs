//! Text normalization shared by every lexical component.

use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// A normalized token sequence.
///
/// Tokens are lowercase, never empty and never contain whitespace. Joining
/// the tokens with single spaces and tokenizing again yields the same
/// sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    /// Space-joined surface form.
    pub fn joined(&self) -> String {
        self.0.join(" ")
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.joined())
    }
}

impl AsRef<[String]> for TokenSeq {
    fn as_ref(&self) -> &[String] {
        &self.0
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn normalize(text: &str) -> String {
    let folded = text.nfkc().collect::<String>().to_lowercase();
    folded.nfkc().collect()
}

/// Tokenizes raw text.
///
/// NFKC-normalizes and lowercases, then splits on whitespace. Every
/// character that is neither a word character nor whitespace becomes a
/// token of its own, except for the possessive clitic `'s`, which is kept
/// as a single token.
///
/// ```
/// use k2t_core::corpus::tokenize;
/// assert_eq!(tokenize("St Frideswide's Priory").joined(), "st frideswide 's priory");
/// assert_eq!(tokenize("December 30, 1995").joined(), "december 30 , 1995");
/// ```
pub fn tokenize(text: &str) -> TokenSeq {
    let norm = normalize(text);
    let chars: Vec<char> = norm.chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if is_word_char(c) {
            word.push(c);
            i += 1;
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if c.is_whitespace() {
            i += 1;
        } else if is_apostrophe(c)
            && chars.get(i + 1) == Some(&'s')
            && !chars.get(i + 2).is_some_and(|&n| is_word_char(n))
        {
            tokens.push("'s".to_string());
            i += 2;
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    TokenSeq(tokens)
}

/// A token of the raw text together with its byte range in that text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OffsetToken {
    /// Normalized form, as [`tokenize`] would produce it.
    pub norm: String,
    pub start: usize,
    pub end: usize,
}

impl OffsetToken {
    pub fn surface<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

/// Tokenizes with the same splitting rules as [`tokenize`] but on the raw
/// characters, normalizing each token separately so that byte offsets into
/// the original text are kept.
pub fn tokenize_with_offsets(text: &str) -> Vec<OffsetToken> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(text.len(), |&(p, _)| p);
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;

    let push = |out: &mut Vec<OffsetToken>, start: usize, end: usize| {
        let norm = normalize(&text[start..end]);
        if !norm.trim().is_empty() {
            out.push(OffsetToken { norm, start, end });
        }
    };

    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if is_word_char(c) {
            word_start.get_or_insert(pos);
            i += 1;
            continue;
        }
        if let Some(start) = word_start.take() {
            push(&mut out, start, pos);
        }
        if c.is_whitespace() {
            i += 1;
        } else if is_apostrophe(c)
            && chars.get(i + 1).map(|&(_, n)| n) == Some('s')
            && !chars.get(i + 2).is_some_and(|&(_, n)| is_word_char(n))
        {
            out.push(OffsetToken { norm: "'s".into(), start: pos, end: end_of(i + 2) });
            i += 2;
        } else {
            push(&mut out, pos, end_of(i + 1));
            i += 1;
        }
    }
    if let Some(start) = word_start {
        push(&mut out, start, text.len());
    }
    out
}

/// Splits attribute names such as `placeOfBurial` or `date_of_birth` into
/// lowercase space-separated words.
pub fn humanize_key(key: &str) -> String {
    let mut words: Vec<String> = Vec::new();
    for chunk in key.split(|c: char| c == '_' || c == '-' || c.is_whitespace()) {
        let chars: Vec<char> = chunk.chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let boundary = i > 0 && c.is_uppercase() && {
                let prev = chars[i - 1];
                let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
                prev.is_lowercase() || prev.is_numeric() || (prev.is_uppercase() && next_lower)
            };
            if boundary && !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            current.extend(c.to_lowercase());
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words.join(" ")
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "inc", "ltd", "co", "corp", "mt",
    "gen", "col", "lt", "sgt", "capt", "rev", "hon", "fig", "approx", "dept", "est", "jan",
    "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}' | ')' | ']')
}

/// Whether the word ending right before the period at `dot` is a guarded
/// abbreviation (`Mr.`, `e.g.`, `U.S.`).
fn is_abbreviation(text: &str, dot: usize) -> bool {
    let before = &text[..dot];
    let word_start = before
        .rfind(char::is_whitespace)
        .map(|i| i + before[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    let word = before[word_start..].trim_start_matches(|c: char| !c.is_alphanumeric());
    if word.is_empty() {
        return false;
    }
    word.contains('.') || ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

/// Rule-based sentence splitter.
///
/// Breaks after `.`, `?` or `!` (plus trailing quotes and brackets) when
/// followed by whitespace and a character that is not a lowercase letter.
/// Periods closing a guarded abbreviation never break. The returned slices
/// are trimmed substrings of `text`, in order.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();

    while let Some((pos, c)) = iter.next() {
        if !is_terminal(c) {
            continue;
        }
        let mut end = pos + c.len_utf8();
        while let Some(&(p, n)) = iter.peek() {
            if is_terminal(n) || is_closer(n) {
                end = p + n.len_utf8();
                iter.next();
            } else {
                break;
            }
        }
        let rest = &text[end..];
        let at_end = rest.trim().is_empty();
        let followed_by_space = rest.starts_with(char::is_whitespace);
        if !at_end && !followed_by_space {
            continue;
        }
        if !at_end {
            let next = rest.trim_start().chars().next();
            if next.is_some_and(char::is_lowercase) {
                continue;
            }
            if c == '.' && end == pos + 1 && is_abbreviation(text, pos) {
                continue;
            }
        }
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            sentences.push(sentence);
        }
        start = end;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(text: &str) -> Vec<String> {
        tokenize(text).into_inner()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(toks("The United Kingdom"), ["the", "united", "kingdom"]);
        assert_eq!(toks("St Frideswide's Priory"), ["st", "frideswide", "'s", "priory"]);
        assert_eq!(toks("December 30, 1995"), ["december", "30", ",", "1995"]);
        assert!(toks("").is_empty());
        assert!(toks("   \t\n").is_empty());
    }

    #[test]
    fn tokenizer_appendix_spacing() {
        for (raw, spaced) in [
            ("his son, malcom", "his son , malcom"),
            ("rio de janeiro, brazil", "rio de janeiro , brazil"),
            ("priory of St Frideswide", "priory of st frideswide"),
            ("St Frideswide’s Priory", "st frideswide 's priory"),
        ] {
            assert_eq!(tokenize(raw).joined(), spaced);
        }
    }

    #[test]
    fn apostrophes_that_are_not_clitics() {
        assert_eq!(toks("don't"), ["don", "'", "t"]);
        assert_eq!(toks("'sup"), ["'", "sup"]);
        assert_eq!(toks("the kids' toys"), ["the", "kids", "'", "toys"]);
    }

    #[test]
    fn nfkc_folds_compatibility_forms() {
        assert_eq!(toks("ﬁle №5"), ["file", "no5"]);
        assert_eq!(toks("ＡＢＣ"), ["abc"]);
    }

    #[test]
    fn offsets_match_plain_tokenizer_on_ascii() {
        let text = "Barack Obama's wife, Michelle, was born in 1964.";
        let with_offsets: Vec<String> = tokenize_with_offsets(text).into_iter().map(|t| t.norm).collect();
        assert_eq!(with_offsets, toks(text));
        let t = &tokenize_with_offsets(text)[0];
        assert_eq!(t.surface(text), "Barack");
    }

    #[test]
    fn key_splitting() {
        assert_eq!(humanize_key("placeOfBurial"), "place of burial");
        assert_eq!(humanize_key("date_of_birth"), "date of birth");
        assert_eq!(humanize_key("place of birth"), "place of birth");
        assert_eq!(humanize_key("HTMLParser"), "html parser");
        assert_eq!(humanize_key("k"), "k");
    }

    #[test]
    fn sentence_examples() {
        assert_eq!(split_sentences("A. B? C!"), ["A.", "B?", "C!"]);
        assert!(split_sentences("").is_empty());
        assert_eq!(
            split_sentences("Mr. Kenny Jay wrestled. He won."),
            ["Mr. Kenny Jay wrestled.", "He won."]
        );
    }

    #[test]
    fn sentence_edge_cases() {
        assert_eq!(split_sentences("no terminal"), ["no terminal"]);
        assert_eq!(split_sentences("Pi is 3.14 exactly. Yes."), ["Pi is 3.14 exactly.", "Yes."]);
        assert_eq!(split_sentences("He said \"go.\" Then left."), ["He said \"go.\"", "Then left."]);
        assert_eq!(split_sentences("Moved to the U.S. in 1990."), ["Moved to the U.S. in 1990."]);
        assert_eq!(split_sentences("Wait... what? Ok"), ["Wait... what?", "Ok"]);
    }
}
