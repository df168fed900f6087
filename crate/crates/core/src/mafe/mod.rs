//! QA-based factuality: question generation over reference sentences,
//! factual triples and hypothesis sentences, question answering against the
//! opposite side, and NLI-backed answer matching.

pub mod spans;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, BackendResult, Backends, Embedder, NliLabel, NliModel, QaAnswer};
use crate::corpus::{linearize_triple, split_sentences, tokenize, FactualTriple};
use crate::textmetrics::{bertscore_from_vectors, harmonic_mean, token_f1};

pub use spans::{is_stopword, rule_based_spans, AnswerSpan, SpanKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QaSource {
    ReferenceSentence,
    FactualTriple,
    HypothesisSentence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Hypothesis,
    Reference,
    /// All linearized triples joined into one text.
    Triples,
}

impl QaSource {
    /// Contexts a question from this source is answered against.
    pub fn contexts(self) -> &'static [ContextKind] {
        match self {
            QaSource::ReferenceSentence | QaSource::FactualTriple => &[ContextKind::Hypothesis],
            QaSource::HypothesisSentence => &[ContextKind::Reference, ContextKind::Triples],
        }
    }

    /// Context that produced the question, used by the round-trip filter.
    pub fn origin(self) -> ContextKind {
        match self {
            QaSource::ReferenceSentence => ContextKind::Reference,
            QaSource::FactualTriple => ContextKind::Triples,
            QaSource::HypothesisSentence => ContextKind::Hypothesis,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub gold_answer: String,
    pub source: QaSource,
    /// Sentence or linearized triple the question was generated from.
    pub origin_text: String,
    pub context_used: Vec<ContextKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub context: ContextKind,
    pub predicted: String,
    pub unanswerable: bool,
    pub confidence: f64,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Recall,
    Precision,
}

/// One scored question. `predicted` and `score` come from the best attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub side: Side,
    pub question: String,
    pub gold: String,
    pub source: QaSource,
    pub origin_text: String,
    pub predicted: String,
    pub unanswerable: bool,
    pub score: f64,
    pub attempts: Vec<Attempt>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Questions skipped because question generation failed.
    pub qg_failures: usize,
    /// Questions dropped by the round-trip filter.
    pub filtered: usize,
    pub no_recall_questions: bool,
    pub empty_hypothesis: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MafeReport {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub items: Vec<ItemRecord>,
    pub diagnostics: Diagnostics,
}

impl MafeReport {
    pub fn side_items(&self, side: Side) -> impl Iterator<Item = &ItemRecord> {
        self.items.iter().filter(move |i| i.side == side)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MafeConfig {
    /// Maximum spans (and so questions) per sentence.
    pub span_cap: usize,
    /// Drop questions whose answer cannot be recovered from their own
    /// source context.
    pub filter_questions: bool,
    pub filter_threshold: f64,
}

impl Default for MafeConfig {
    fn default() -> Self {
        Self { span_cap: 8, filter_questions: false, filter_threshold: 0.5 }
    }
}

/// Answer spans of a sentence from the extraction backend, or the rule-based
/// fallback when none is configured.
pub fn extract_spans(sentence: &str, backends: &Backends) -> BackendResult<Vec<AnswerSpan>> {
    let Some(extractor) = &backends.spans else {
        return Ok(rule_based_spans(sentence));
    };
    let mut spans = extractor
        .spans(sentence)?
        .into_iter()
        .map(|(s, e)| AnswerSpan::new(sentence, s, e, SpanKind::Other))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|m| BackendError::Protocol { endpoint: "/v1/spans".into(), field: "spans".into(), message: m })?;
    spans.sort_by_key(|s| (s.start, s.end));
    let mut seen = HashSet::new();
    spans.retain(|s| seen.insert(s.surface.clone()));
    Ok(spans)
}

pub fn generate_question(sentence: &str, span: &AnswerSpan, backends: &Backends) -> BackendResult<String> {
    let (bs, be) = span.byte_range();
    if span.sentence != sentence || sentence.get(bs..be) != Some(span.surface.as_str()) {
        return Err(BackendError::InvalidRequest(format!("span `{}` does not lie in the sentence", span.surface)));
    }
    backends.qg.question(sentence, span.start, span.end)
}

/// Blank contexts are unanswerable without consulting the backend.
pub fn answer_question(question: &str, context: &str, backends: &Backends) -> BackendResult<QaAnswer> {
    if question.trim().is_empty() {
        return Err(BackendError::InvalidRequest("question is empty".into()));
    }
    if context.trim().is_empty() {
        return Ok(QaAnswer::unanswerable(0.0));
    }
    backends.qa.answer(question, context)
}

/// Scores a predicted answer against the gold one: NLI entailment 1,
/// contradiction 0, neutral falls through to BERTScore F1 of the two
/// answers. Without NLI, token F1.
pub fn match_answers(
    question: &str,
    gold: &str,
    predicted: &str,
    nli: Option<&dyn NliModel>,
    embed: &dyn Embedder,
) -> BackendResult<f64> {
    if tokenize(predicted).is_empty() {
        return Ok(0.0);
    }
    let Some(nli) = nli else {
        return Ok(token_f1(gold, predicted));
    };
    let premise = format!("{question} {gold}");
    let hypothesis = format!("{question} {predicted}");
    match nli.nli(&premise, &hypothesis)?.label {
        NliLabel::Entailment => Ok(1.0),
        NliLabel::Contradiction => Ok(0.0),
        NliLabel::Neutral => {
            let vecs = embed.embed_tokens(&[gold.to_string(), predicted.to_string()])?;
            if vecs.len() != 2 {
                return Err(BackendError::Protocol {
                    endpoint: "/v1/embed".into(),
                    field: "vectors".into(),
                    message: format!("expected 2 entries, got {}", vecs.len()),
                });
            }
            match bertscore_from_vectors(&vecs[1], &vecs[0]) {
                Ok(s) => Ok(s.f1),
                // A side with no tokens cannot be matched.
                Err(_) => Ok(0.0),
            }
        }
    }
}

pub fn mafe_f1(recall: f64, precision: f64) -> f64 {
    harmonic_mean(precision, recall)
}

/// Linearized triples joined as sentences: the triple-side QA context.
pub fn triples_context(triples: &[FactualTriple]) -> String {
    triples.iter().map(linearize_triple).collect::<Vec<_>>().join(". ")
}

struct Contexts<'a> {
    hypothesis: &'a str,
    reference: &'a str,
    triples: String,
}

impl Contexts<'_> {
    fn get(&self, kind: ContextKind) -> &str {
        match kind {
            ContextKind::Hypothesis => self.hypothesis,
            ContextKind::Reference => self.reference,
            ContextKind::Triples => &self.triples,
        }
    }
}

struct Pending {
    sentence: String,
    start: usize,
    end: usize,
    gold: String,
    source: QaSource,
}

fn sentence_questions(text: &str, source: QaSource, cap: usize, backends: &Backends) -> BackendResult<Vec<Pending>> {
    let per_sentence: Vec<Vec<Pending>> = split_sentences(text)
        .par_iter()
        .map(|sentence| {
            Ok(extract_spans(sentence, backends)?
                .into_iter()
                .take(cap)
                .map(|span| Pending {
                    sentence: sentence.to_string(),
                    start: span.start,
                    end: span.end,
                    gold: span.surface,
                    source,
                })
                .collect())
        })
        .collect::<BackendResult<_>>()?;
    Ok(per_sentence.into_iter().flatten().collect())
}

fn triple_questions(triples: &[FactualTriple]) -> Vec<Pending> {
    triples
        .iter()
        .map(|t| {
            let text = linearize_triple(t);
            let (bs, be) = t.value_span();
            let start = text[..bs].chars().count();
            let end = start + text[bs..be].chars().count();
            Pending { sentence: text, start, end, gold: t.value().to_string(), source: QaSource::FactualTriple }
        })
        .collect()
}

/// Generates questions in parallel, keeping input order. Failures are
/// logged and counted.
fn realize(pending: Vec<Pending>, backends: &Backends, diagnostics: &mut Diagnostics) -> Vec<QaItem> {
    let generated: Vec<Option<QaItem>> = pending
        .into_par_iter()
        .map(|p| match backends.qg.question(&p.sentence, p.start, p.end) {
            Ok(question) if !question.trim().is_empty() => Some(QaItem {
                question,
                gold_answer: p.gold,
                source: p.source,
                origin_text: p.sentence,
                context_used: p.source.contexts().to_vec(),
            }),
            Ok(_) => {
                log::warn!("question generation returned an empty question for `{}`", p.gold);
                None
            }
            Err(e) => {
                log::warn!("question generation failed for `{}`: {e}", p.gold);
                None
            }
        })
        .collect();
    diagnostics.qg_failures += generated.iter().filter(|g| g.is_none()).count();
    generated.into_iter().flatten().collect()
}

fn attempt(item: &QaItem, kind: ContextKind, contexts: &Contexts, backends: &Backends) -> BackendResult<Attempt> {
    let qa = answer_question(&item.question, contexts.get(kind), backends)?;
    let score = match qa.text() {
        Some(predicted) => match_answers(&item.question, &item.gold_answer, predicted, backends.nli.as_deref(), backends.embed.as_ref())?,
        None => 0.0,
    };
    Ok(Attempt { context: kind, predicted: qa.answer, unanswerable: qa.unanswerable, confidence: qa.confidence, score })
}

fn score_items(
    items: Vec<QaItem>,
    side: Side,
    contexts: &Contexts,
    backends: &Backends,
    config: &MafeConfig,
) -> BackendResult<Vec<Option<ItemRecord>>> {
    items
        .into_par_iter()
        .map(|item| {
            if config.filter_questions {
                let check = attempt(&item, item.source.origin(), contexts, backends)?;
                if check.score < config.filter_threshold {
                    return Ok(None);
                }
            }
            let attempts = item
                .context_used
                .iter()
                .map(|kind| attempt(&item, *kind, contexts, backends))
                .collect::<BackendResult<Vec<_>>>()?;
            let best = attempts
                .iter()
                .fold(None::<&Attempt>, |best, a| match best {
                    Some(b) if b.score >= a.score => Some(b),
                    _ => Some(a),
                })
                .expect("every source has at least one context");
            Ok(Some(ItemRecord {
                side,
                predicted: best.predicted.clone(),
                unanswerable: attempts.iter().all(|a| a.unanswerable),
                score: best.score,
                question: item.question,
                gold: item.gold_answer,
                source: item.source,
                origin_text: item.origin_text,
                attempts,
            }))
        })
        .collect()
}

fn mean_score<'a>(items: impl Iterator<Item = &'a ItemRecord>) -> Option<f64> {
    let (sum, n) = items.fold((0.0, 0usize), |(s, n), i| (s + i.score, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Full evaluation of one hypothesis against a reference and its triples.
///
/// QG failures are skipped and tallied; QA, NLI and embedding failures
/// abort.
pub fn evaluate(
    hypothesis: &str,
    reference: &str,
    triples: &[FactualTriple],
    backends: &Backends,
    config: &MafeConfig,
) -> BackendResult<MafeReport> {
    let contexts = Contexts { hypothesis, reference, triples: triples_context(triples) };
    let mut diagnostics = Diagnostics::default();

    let mut recall_pending = sentence_questions(reference, QaSource::ReferenceSentence, config.span_cap, backends)?;
    recall_pending.extend(triple_questions(triples));
    let recall_items = realize(recall_pending, backends, &mut diagnostics);
    let precision_pending = sentence_questions(hypothesis, QaSource::HypothesisSentence, config.span_cap, backends)?;
    let precision_items = realize(precision_pending, backends, &mut diagnostics);

    let mut items = Vec::new();
    for (side, batch) in [(Side::Recall, recall_items), (Side::Precision, precision_items)] {
        for record in score_items(batch, side, &contexts, backends, config)? {
            match record {
                Some(r) => items.push(r),
                None => diagnostics.filtered += 1,
            }
        }
    }

    let recall = mean_score(items.iter().filter(|i| i.side == Side::Recall));
    let precision = mean_score(items.iter().filter(|i| i.side == Side::Precision));
    diagnostics.no_recall_questions = recall.is_none();
    diagnostics.empty_hypothesis = tokenize(hypothesis).is_empty();
    let (recall, precision) = (recall.unwrap_or(0.0), precision.unwrap_or(0.0));
    Ok(MafeReport { recall, precision, f1: mafe_f1(recall, precision), items, diagnostics })
}

pub fn mafe_recall(hypothesis: &str, reference: &str, triples: &[FactualTriple], backends: &Backends) -> BackendResult<f64> {
    Ok(evaluate(hypothesis, reference, triples, backends, &MafeConfig::default())?.recall)
}

pub fn mafe_precision(hypothesis: &str, reference: &str, triples: &[FactualTriple], backends: &Backends) -> BackendResult<f64> {
    Ok(evaluate(hypothesis, reference, triples, backends, &MafeConfig::default())?.precision)
}
