//! Dataset rows, factual triples and JSON-Lines persistence.

mod text;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use text::{humanize_key, split_sentences, tokenize, tokenize_with_offsets, OffsetToken, TokenSeq};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("invalid triple: {0}")]
    Triple(String),
}

/// A factual key with its gold value. The value is withheld from model
/// input but consumed by evaluation and the values-with-groundings setting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyValue {
    pub key: String,
    pub value: String,
}

impl KeyValue {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Self { key: key.into(), value: value.into() }
    }
}

/// One dataset row: an entity section with its keys, candidate grounding
/// passages and gold description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub entity: String,
    pub title: String,
    pub factual_keys: Vec<KeyValue>,
    pub topical_keys: Vec<String>,
    pub passages: Vec<String>,
    pub reference: String,
}

impl Instance {
    pub fn validate(&self) -> Result<(), String> {
        if self.entity.trim().is_empty() {
            return Err("entity must be non-empty".into());
        }
        if self.reference.trim().is_empty() {
            return Err("reference must be non-empty".into());
        }
        if self.passages.is_empty() {
            return Err("at least one passage is required".into());
        }
        if let Some(i) = self.passages.iter().position(|p| tokenize(p).is_empty()) {
            return Err(format!("passage {i} is empty after normalization"));
        }
        Ok(())
    }

    /// Factual keys without their values.
    pub fn key_names(&self) -> impl Iterator<Item = &str> {
        self.factual_keys.iter().map(|kv| kv.key.as_str())
    }

    /// The (entity, key, value) triples of this row. Pairs with an empty
    /// key or value are skipped.
    pub fn triples(&self) -> Vec<FactualTriple> {
        self.factual_keys
            .iter()
            .filter_map(|kv| FactualTriple::new(&self.entity, &kv.key, &kv.value).ok())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactualTriple {
    entity: String,
    key: String,
    value: String,
}

impl FactualTriple {
    pub fn new(entity: &str, key: &str, value: &str) -> Result<Self, CorpusError> {
        for (name, field) in [("entity", entity), ("key", key), ("value", value)] {
            if field.trim().is_empty() {
                return Err(CorpusError::Triple(format!("{name} is empty")));
            }
        }
        Ok(Self {
            entity: entity.trim().to_string(),
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        })
    }

    pub fn entity(&self) -> &str {
        &self.entity
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    /// Byte range of the lowercased value inside [`linearize_triple`]'s
    /// output; the value is always the final segment.
    pub fn value_span(&self) -> (usize, usize) {
        let text = linearize_triple(self);
        let value = collapse_whitespace(&self.value).to_lowercase();
        (text.len() - value.len(), text.len())
    }
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders a triple as `"entity key value"`: the entity verbatim, the key
/// split into lowercase words and the value lowercased.
pub fn linearize_triple(triple: &FactualTriple) -> String {
    format!(
        "{} {} {}",
        collapse_whitespace(&triple.entity),
        humanize_key(&triple.key),
        collapse_whitespace(&triple.value).to_lowercase()
    )
}

/// A record type stored one JSON object per line.
pub trait JsonlRecord: Serialize + DeserializeOwned {
    /// Top-level fields that must be present on every line.
    const REQUIRED_FIELDS: &'static [&'static str];

    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

impl JsonlRecord for Instance {
    const REQUIRED_FIELDS: &'static [&'static str] =
        &["entity", "title", "factual_keys", "topical_keys", "passages", "reference"];

    fn check(&self) -> Result<(), String> {
        self.validate()
    }
}

/// Reads a JSON-Lines file. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn read_jsonl<T: JsonlRecord>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line(&line, idx + 1)?);
    }
    Ok(records)
}

/// Parses one JSONL line into a record, checking required fields first so
/// that schema errors name the field.
pub fn parse_line<T: JsonlRecord>(line: &str, line_no: usize) -> Result<T, CorpusError> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })?;
    let object = value.as_object().ok_or_else(|| CorpusError::Malformed {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;
    if let Some(field) = T::REQUIRED_FIELDS.iter().find(|f| !object.contains_key(**f)) {
        return Err(CorpusError::MissingField { line: line_no, field: field.to_string() });
    }
    let record: T = serde_json::from_value(value)
        .map_err(|e| CorpusError::Invalid { line: line_no, message: e.to_string() })?;
    record.check().map_err(|message| CorpusError::Invalid { line: line_no, message })?;
    Ok(record)
}

pub fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.into(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_jsonl_to(records, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn write_jsonl_to<T: Serialize, W: Write>(records: &[T], out: &mut W) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_instances(path: impl AsRef<Path>) -> Result<Vec<Instance>, CorpusError> {
    read_jsonl(path)
}

pub fn write_instances(instances: &[Instance], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_jsonl(instances, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Instance {
        Instance {
            entity: "Barack Obama".into(),
            title: "Early life".into(),
            factual_keys: vec![KeyValue::new("place of birth", "Hawaii")],
            topical_keys: vec!["hospital".into()],
            passages: vec!["Obama was born in Honolulu, Hawaii.".into()],
            reference: "Obama was born in Hawaii.".into(),
        }
    }

    #[test]
    fn linearization() {
        let t = FactualTriple::new("Barack Obama", "place of birth", "Hawaii").unwrap();
        assert_eq!(linearize_triple(&t), "Barack Obama place of birth hawaii");
        let t = FactualTriple::new("X", "k", "v").unwrap();
        assert_eq!(linearize_triple(&t), "X k v");
        let t = FactualTriple::new("Henry Stanton", "placeOfBurial", "West Point").unwrap();
        assert_eq!(linearize_triple(&t), "Henry Stanton place of burial west point");
        let text = linearize_triple(&t);
        let (s, e) = t.value_span();
        assert_eq!(&text[s..e], "west point");
    }

    #[test]
    fn triple_rejects_empty_fields() {
        assert!(FactualTriple::new("", "k", "v").is_err());
        assert!(FactualTriple::new("e", " ", "v").is_err());
        assert!(FactualTriple::new("e", "k", "").is_err());
    }

    #[test]
    fn empty_file_reads_empty() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(read_instances(f.path()).unwrap().is_empty());
    }

    #[test]
    fn single_line_round_trip() {
        let f = tempfile::NamedTempFile::new().unwrap();
        write_instances(&[sample()], f.path()).unwrap();
        let back = read_instances(f.path()).unwrap();
        assert_eq!(back, vec![sample()]);
        let before = std::fs::read(f.path()).unwrap();
        write_instances(&back, f.path()).unwrap();
        assert_eq!(std::fs::read(f.path()).unwrap(), before);
    }

    #[test]
    fn missing_reference_is_a_schema_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let mut v = serde_json::to_value(sample()).unwrap();
        v.as_object_mut().unwrap().remove("reference");
        writeln!(f, "{}", serde_json::to_string(&sample()).unwrap()).unwrap();
        writeln!(f, "{v}").unwrap();
        match read_instances(f.path()) {
            Err(CorpusError::MissingField { line, field }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "reference");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{}", serde_json::to_string(&sample()).unwrap()).unwrap();
        writeln!(f).unwrap();
        writeln!(f, "{{not json").unwrap();
        match read_instances(f.path()) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariants_are_enforced_on_read() {
        let mut bad = sample();
        bad.passages = vec!["  ".into()];
        let line = serde_json::to_string(&bad).unwrap();
        assert!(matches!(parse_line::<Instance>(&line, 1), Err(CorpusError::Invalid { .. })));
        bad.passages.clear();
        let line = serde_json::to_string(&bad).unwrap();
        assert!(matches!(parse_line::<Instance>(&line, 1), Err(CorpusError::Invalid { .. })));
    }

    #[test]
    fn empty_key_lists_are_valid() {
        let mut inst = sample();
        inst.factual_keys.clear();
        inst.topical_keys.clear();
        assert!(inst.validate().is_ok());
        assert!(inst.triples().is_empty());
    }
}
