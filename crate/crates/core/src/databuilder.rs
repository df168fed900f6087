//! Distant-supervision dataset construction from pre-extracted Wikipedia
//! section records: infobox alignment for factual keys, hyperlink types for
//! topical keys, and an entity-level grounding filter.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder};
use crate::corpus::{humanize_key, tokenize, Instance, JsonlRecord, KeyValue};
use crate::textmetrics::{bertscore_from_vectors, rouge_l};

pub const PASSAGES_PER_INSTANCE: usize = 40;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("invalid key-value pair: {0}")]
    Pair(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperlink {
    pub anchor: String,
    /// The target's instance-of or subclass-of label.
    pub instance_of: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSectionRecord {
    pub entity: String,
    pub article_title: String,
    pub section_title: String,
    pub section_text: String,
    pub infobox_pairs: Vec<KeyValue>,
    pub hyperlink_instanceof: Vec<Hyperlink>,
    pub passages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl JsonlRecord for RawSectionRecord {
    const REQUIRED_FIELDS: &'static [&'static str] = &[
        "entity",
        "article_title",
        "section_title",
        "section_text",
        "infobox_pairs",
        "hyperlink_instanceof",
        "passages",
    ];

    fn check(&self) -> Result<(), String> {
        if self.section_text.trim().is_empty() {
            return Err("section_text must be non-empty".into());
        }
        if self.entity.trim().is_empty() {
            return Err("entity must be non-empty".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub bertscore_precision: f64,
    pub rouge_l_precision: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub bert: f64,
    pub rouge_l: f64,
    pub ground: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { bert: 0.82, rouge_l: 0.25, ground: 0.82 }
    }
}

impl Thresholds {
    /// Both scores must be strictly above their thresholds.
    pub fn accepts(&self, score: &AlignmentScore) -> bool {
        score.bertscore_precision > self.bert && score.rouge_l_precision > self.rouge_l
    }
}

type TokenVectors = Vec<Vec<f64>>;

fn embed_pair(embed: &dyn Embedder, a: &str, b: &str) -> Result<(TokenVectors, TokenVectors), BuildError> {
    let mut v = embed.embed_tokens(&[a.to_string(), b.to_string()])?;
    if v.len() != 2 {
        return Err(BackendError::Protocol {
            endpoint: "/v1/embed".into(),
            field: "vectors".into(),
            message: format!("expected 2 entries, got {}", v.len()),
        }
        .into());
    }
    let second = v.pop().unwrap();
    Ok((v.pop().unwrap(), second))
}

/// Scores `"key value"` against the section: BERTScore precision and
/// ROUGE-L precision with the pair as candidate.
pub fn score_kv_alignment(pair: &KeyValue, section_text: &str, embed: &dyn Embedder) -> Result<AlignmentScore, BuildError> {
    if pair.key.trim().is_empty() || pair.value.trim().is_empty() {
        return Err(BuildError::Pair(format!("{pair:?} has an empty side")));
    }
    let candidate = format!("{} {}", humanize_key(&pair.key), pair.value);
    let rouge_l_precision = rouge_l(&tokenize(&candidate), &tokenize(section_text)).precision;
    let (cv, sv) = embed_pair(embed, &candidate, section_text)?;
    let bertscore_precision = bertscore_from_vectors(&cv, &sv).map_or(0.0, |s| s.precision);
    Ok(AlignmentScore { bertscore_precision, rouge_l_precision })
}

/// Infobox pairs aligned with the section text. Pairs with an empty side
/// are skipped.
pub fn select_factual_keys(
    record: &RawSectionRecord,
    embed: &dyn Embedder,
    thresholds: &Thresholds,
) -> Result<Vec<(KeyValue, AlignmentScore)>, BuildError> {
    let mut kept = Vec::new();
    for pair in &record.infobox_pairs {
        if pair.key.trim().is_empty() || pair.value.trim().is_empty() {
            continue;
        }
        let score = score_kv_alignment(pair, &record.section_text, embed)?;
        if thresholds.accepts(&score) {
            kept.push((pair.clone(), score));
        }
    }
    Ok(kept)
}

/// Type labels of hyperlinks whose anchor occurs in the section, by first
/// occurrence, lowercased and deduplicated.
pub fn derive_topical_keys(record: &RawSectionRecord) -> Vec<String> {
    let text = record.section_text.to_lowercase();
    let mut found: Vec<(usize, usize, String)> = record
        .hyperlink_instanceof
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let anchor = h.anchor.trim().to_lowercase();
            let label = h.instance_of.trim().to_lowercase();
            if anchor.is_empty() || label.is_empty() {
                return None;
            }
            text.find(&anchor).map(|pos| (pos, i, label))
        })
        .collect();
    found.sort_by_key(|&(pos, i, _)| (pos, i));
    let mut keys: Vec<String> = Vec::new();
    for (_, _, label) in found {
        if !keys.contains(&label) {
            keys.push(label);
        }
    }
    keys
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingDecision {
    pub keep: bool,
    /// Mean best-passage recall over pairs; `None` when there were no pairs.
    pub mean_recall: Option<f64>,
}

/// How well the selected values are covered by the grounding passages: for
/// each value, the best BERTScore recall over passages; averaged over all
/// pairs of the entity.
pub fn filter_entity(
    sections: &[(Vec<KeyValue>, Vec<String>)],
    embed: &dyn Embedder,
    threshold: f64,
) -> Result<GroundingDecision, BuildError> {
    let mut per_pair = Vec::new();
    for (pairs, passages) in sections {
        for pair in pairs {
            let mut best = 0.0f64;
            for passage in passages {
                let (vv, pv) = embed_pair(embed, &pair.value, passage)?;
                if let Ok(s) = bertscore_from_vectors(&pv, &vv) {
                    best = best.max(s.recall);
                }
            }
            per_pair.push(best);
        }
    }
    if per_pair.is_empty() {
        return Ok(GroundingDecision { keep: true, mean_recall: None });
    }
    let mean = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok(GroundingDecision { keep: mean >= threshold, mean_recall: Some(mean) })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub records: usize,
    pub entities: usize,
    pub entities_dropped: usize,
    pub entities_without_pairs: usize,
    pub sections_without_passages: usize,
    pub instances: usize,
}

pub struct BuildOutput {
    pub instances: Vec<Instance>,
    pub report: BuildReport,
}

struct EntityResult {
    instances: Vec<Instance>,
    dropped: bool,
    no_pairs: bool,
    no_passages: usize,
}

fn build_entity(records: &[&RawSectionRecord], embed: &dyn Embedder, thresholds: &Thresholds) -> Result<EntityResult, BuildError> {
    let mut instances = Vec::new();
    let mut evidence = Vec::new();
    let mut no_passages = 0;
    for record in records {
        let pairs: Vec<KeyValue> = select_factual_keys(record, embed, thresholds)?.into_iter().map(|(kv, _)| kv).collect();
        let passages: Vec<String> = record
            .passages
            .iter()
            .filter(|p| !tokenize(p).is_empty())
            .take(PASSAGES_PER_INSTANCE)
            .cloned()
            .collect();
        if passages.is_empty() {
            log::warn!("`{}` / `{}` has no usable passages; skipped", record.entity, record.section_title);
            no_passages += 1;
            continue;
        }
        evidence.push((pairs.clone(), passages.clone()));
        instances.push(Instance {
            entity: record.entity.clone(),
            title: record.section_title.clone(),
            factual_keys: pairs,
            topical_keys: derive_topical_keys(record),
            passages,
            reference: record.section_text.clone(),
        });
    }
    let decision = filter_entity(&evidence, embed, thresholds.ground)?;
    if decision.mean_recall.is_none() {
        log::warn!("`{}` has no aligned pairs; kept without grounding evidence", records[0].entity);
    }
    if !decision.keep {
        instances.clear();
    }
    Ok(EntityResult { instances, dropped: !decision.keep, no_pairs: decision.mean_recall.is_none(), no_passages })
}

/// Groups records by entity (first-appearance order), builds each entity's
/// instances and applies the grounding filter.
pub fn build(records: &[RawSectionRecord], embed: &dyn Embedder, thresholds: &Thresholds) -> Result<BuildOutput, BuildError> {
    let mut groups: Vec<Vec<&RawSectionRecord>> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for r in records {
        let slot = *index.entry(r.entity.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(r);
    }
    let results: Vec<EntityResult> =
        groups.par_iter().map(|g| build_entity(g, embed, thresholds)).collect::<Result<_, _>>()?;
    let mut report = BuildReport { records: records.len(), entities: groups.len(), ..Default::default() };
    let mut instances = Vec::new();
    for r in results {
        report.entities_dropped += r.dropped as usize;
        report.entities_without_pairs += r.no_pairs as usize;
        report.sections_without_passages += r.no_passages;
        instances.extend(r.instances);
    }
    report.instances = instances.len();
    Ok(BuildOutput { instances, report })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub instances: usize,
    pub entities: usize,
    pub avg_output_tokens: f64,
    pub avg_passages: f64,
    pub avg_passage_tokens: f64,
    pub avg_factual_keys: f64,
    pub avg_topical_keys: f64,
}

pub fn stats(instances: &[Instance]) -> DatasetStats {
    if instances.is_empty() {
        return DatasetStats::default();
    }
    let n = instances.len() as f64;
    let mean = |f: &dyn Fn(&Instance) -> f64| instances.iter().map(f).sum::<f64>() / n;
    let passage_count: usize = instances.iter().map(|i| i.passages.len()).sum();
    let passage_tokens: usize = instances.iter().flat_map(|i| &i.passages).map(|p| tokenize(p).len()).sum();
    let mut entities: Vec<&str> = instances.iter().map(|i| i.entity.as_str()).collect();
    entities.sort_unstable();
    entities.dedup();
    DatasetStats {
        instances: instances.len(),
        entities: entities.len(),
        avg_output_tokens: mean(&|i| tokenize(&i.reference).len() as f64),
        avg_passages: passage_count as f64 / n,
        avg_passage_tokens: if passage_count == 0 { 0.0 } else { passage_tokens as f64 / passage_count as f64 },
        avg_factual_keys: mean(&|i| i.factual_keys.len() as f64),
        avg_topical_keys: mean(&|i| i.topical_keys.len() as f64),
    }
}
