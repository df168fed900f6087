//! File plumbing: JSONL and plain-text inputs, atomic outputs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use k2t_core::corpus::{read_instances, write_jsonl_to, FactualTriple, Instance};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn instances(path: &Path) -> Result<Vec<Instance>> {
    read_instances(path).with_context(|| format!("reading instances from {}", path.display()))
}

/// One text per line. A trailing newline does not add an empty line.
pub fn lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Deserialize)]
struct RawTriple {
    entity: String,
    key: String,
    value: String,
}

/// A JSON array of `{"entity", "key", "value"}` objects per line.
pub fn triples(path: &Path) -> Result<Vec<Vec<FactualTriple>>> {
    lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let raw: Vec<RawTriple> =
                serde_json::from_str(line).with_context(|| format!("{}:{}: expected an array of triples", path.display(), i + 1))?;
            raw.iter()
                .map(|t| FactualTriple::new(&t.entity, &t.key, &t.value))
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

/// Writes to a temporary file next to `path`, then renames it into place.
fn atomic(path: &Path, write: impl FnOnce(&mut BufWriter<&mut tempfile::NamedTempFile>) -> std::io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    {
        let mut out = BufWriter::new(&mut tmp);
        write(&mut out).and_then(|_| out.flush()).with_context(|| format!("writing {}", path.display()))?;
    }
    tmp.persist(path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    atomic(path, |out| write_jsonl_to(records, out))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        out.write_all(b"\n")
    })
}
