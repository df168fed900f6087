//! HTTP client for the `/v1` JSON protocol.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Map, Value};

use crate::corpus::humanize_key;

use super::{
    BackendConfig, BackendError, BackendResult, EmbedMode, Embedder, Endpoint, Generation,
    NliLabel, NliModel, NliVerdict, QaAnswer, QuestionAnswerer, QuestionGenerator, SpanExtractor,
    TextGenerator,
};

/// Environment variable holding the backend base URL.
pub const BACKEND_URL_ENV: &str = "K2T_BACKEND_URL";

/// Counting semaphore bounding in-flight requests.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Self { in_flight: Mutex::new(0), freed: Condvar::new(), limit }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking client, shareable across threads.
pub struct RemoteBackend {
    base: String,
    agent: ureq::Agent,
    gate: Gate,
    retries: usize,
}

impl RemoteBackend {
    pub fn new(config: BackendConfig) -> BackendResult<Self> {
        config.validate()?;
        let Endpoint::Url(base) = config.endpoint else {
            return Err(BackendError::Config("remote backend needs a URL".into()));
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .max_idle_connections(config.max_concurrency)
            .build();
        Ok(Self { base, agent, gate: Gate::new(config.max_concurrency), retries: config.retries })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post(&self, path: &str, body: Value) -> BackendResult<Map<String, Value>> {
        let endpoint = format!("/v1/{path}");
        let url = format!("{}{endpoint}", self.base);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let outcome = {
                let _permit = self.gate.acquire();
                self.agent.post(&url).send_json(body.clone())
            };
            let retry_after = match outcome {
                Ok(resp) => {
                    let value: Value = resp.into_json().map_err(|e| BackendError::Protocol {
                        endpoint: endpoint.clone(),
                        field: "<body>".into(),
                        message: format!("response is not JSON: {e}"),
                    })?;
                    return match value {
                        Value::Object(map) => Ok(map),
                        other => Err(BackendError::Protocol {
                            endpoint,
                            field: "<body>".into(),
                            message: format!("expected an object, got {other}"),
                        }),
                    };
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let body_text = resp.into_string().unwrap_or_default();
                    if !(status == 429 || status >= 500) || attempts > self.retries {
                        return Err(BackendError::Http { endpoint, status, body: body_text });
                    }
                    format!("HTTP {status}")
                }
                Err(ureq::Error::Transport(t)) => {
                    if attempts > self.retries {
                        return Err(BackendError::Transport { endpoint, attempts, message: t.to_string() });
                    }
                    t.to_string()
                }
            };
            log::debug!("{endpoint}: attempt {attempts} failed ({retry_after}), retrying");
            std::thread::sleep(Duration::from_millis(25 * attempts as u64));
        }
    }
}

fn protocol(endpoint: &str, field: &str, message: impl Into<String>) -> BackendError {
    BackendError::Protocol { endpoint: format!("/v1/{endpoint}"), field: field.into(), message: message.into() }
}

fn field<'a>(map: &'a Map<String, Value>, endpoint: &str, name: &str) -> BackendResult<&'a Value> {
    map.get(name).ok_or_else(|| protocol(endpoint, name, "missing"))
}

fn str_field(map: &Map<String, Value>, endpoint: &str, name: &str) -> BackendResult<String> {
    field(map, endpoint, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| protocol(endpoint, name, "expected a string"))
}

fn f64_of(v: &Value, endpoint: &str, name: &str) -> BackendResult<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| protocol(endpoint, name, "expected a finite number"))
}

fn usize_of(v: &Value, endpoint: &str, name: &str) -> BackendResult<usize> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| protocol(endpoint, name, "expected a non-negative integer"))
}

fn vector_of(v: &Value, dim: usize, endpoint: &str, name: &str) -> BackendResult<Vec<f64>> {
    let items = v.as_array().ok_or_else(|| protocol(endpoint, name, "expected an array of numbers"))?;
    if items.len() != dim {
        return Err(protocol(endpoint, name, format!("vector has {} entries, dim is {dim}", items.len())));
    }
    items.iter().map(|x| f64_of(x, endpoint, name)).collect()
}

impl RemoteBackend {
    fn embed(&self, texts: &[String], mode: EmbedMode) -> BackendResult<(usize, Vec<Value>)> {
        const EP: &str = "embed";
        let map = self.post(EP, json!({ "texts": texts, "mode": mode }))?;
        let dim = usize_of(field(&map, EP, "dim")?, EP, "dim")?;
        let vectors = field(&map, EP, "vectors")?
            .as_array()
            .ok_or_else(|| protocol(EP, "vectors", "expected an array"))?
            .clone();
        if vectors.len() != texts.len() {
            return Err(protocol(EP, "vectors", format!("{} entries for {} texts", vectors.len(), texts.len())));
        }
        Ok((dim, vectors))
    }
}

impl QuestionGenerator for RemoteBackend {
    fn question(&self, sentence: &str, start: usize, end: usize) -> BackendResult<String> {
        const EP: &str = "qg";
        if start >= end || end > sentence.chars().count() {
            return Err(BackendError::InvalidRequest(format!("span [{start}, {end}) outside sentence")));
        }
        let map = self.post(EP, json!({ "sentence": sentence, "answer_start": start, "answer_end": end }))?;
        let q = str_field(&map, EP, "question")?;
        if q.trim().is_empty() {
            return Err(protocol(EP, "question", "empty question"));
        }
        Ok(q)
    }

    /// Sends `"{entity} {key}"` with the key marked as the answer span.
    fn key_question(&self, entity: &str, key: &str) -> BackendResult<String> {
        let entity = entity.trim();
        let key = humanize_key(key);
        let start = entity.chars().count() + 1;
        self.question(&format!("{entity} {key}"), start, start + key.chars().count())
    }
}

impl QuestionAnswerer for RemoteBackend {
    fn answer(&self, question: &str, context: &str) -> BackendResult<QaAnswer> {
        const EP: &str = "qa";
        let map = self.post(EP, json!({ "question": question, "context": context }))?;
        let answer = str_field(&map, EP, "answer")?;
        let unanswerable = field(&map, EP, "unanswerable")?
            .as_bool()
            .ok_or_else(|| protocol(EP, "unanswerable", "expected a boolean"))?;
        let confidence = f64_of(field(&map, EP, "confidence")?, EP, "confidence")?;
        Ok(QaAnswer { answer, unanswerable, confidence })
    }
}

impl NliModel for RemoteBackend {
    fn nli(&self, premise: &str, hypothesis: &str) -> BackendResult<NliVerdict> {
        const EP: &str = "nli";
        let map = self.post(EP, json!({ "premise": premise, "hypothesis": hypothesis }))?;
        let label_text = str_field(&map, EP, "label")?;
        let label = NliLabel::parse(&label_text)
            .ok_or_else(|| protocol(EP, "label", format!("unknown label `{label_text}`")))?;
        let probs = vector_of(field(&map, EP, "probs")?, 3, EP, "probs")?;
        NliVerdict::new(label, [probs[0], probs[1], probs[2]]).map_err(|m| protocol(EP, "probs", m))
    }
}

impl Embedder for RemoteBackend {
    fn embed_tokens(&self, texts: &[String]) -> BackendResult<Vec<Vec<Vec<f64>>>> {
        let (dim, vectors) = self.embed(texts, EmbedMode::Token)?;
        vectors
            .iter()
            .map(|per_text| {
                per_text
                    .as_array()
                    .ok_or_else(|| protocol("embed", "vectors", "expected one array of vectors per text"))?
                    .iter()
                    .map(|v| vector_of(v, dim, "embed", "vectors"))
                    .collect()
            })
            .collect()
    }

    fn embed_sequences(&self, texts: &[String]) -> BackendResult<Vec<Vec<f64>>> {
        let (dim, vectors) = self.embed(texts, EmbedMode::Sequence)?;
        vectors.iter().map(|v| vector_of(v, dim, "embed", "vectors")).collect()
    }
}

impl SpanExtractor for RemoteBackend {
    fn spans(&self, sentence: &str) -> BackendResult<Vec<(usize, usize)>> {
        const EP: &str = "spans";
        let map = self.post(EP, json!({ "sentence": sentence }))?;
        let len = sentence.chars().count();
        field(&map, EP, "spans")?
            .as_array()
            .ok_or_else(|| protocol(EP, "spans", "expected an array"))?
            .iter()
            .map(|s| {
                let start = usize_of(s.get("start").ok_or_else(|| protocol(EP, "spans.start", "missing"))?, EP, "spans.start")?;
                let end = usize_of(s.get("end").ok_or_else(|| protocol(EP, "spans.end", "missing"))?, EP, "spans.end")?;
                if start >= end || end > len {
                    return Err(protocol(EP, "spans", format!("span [{start}, {end}) outside sentence of {len} characters")));
                }
                Ok((start, end))
            })
            .collect()
    }
}

impl TextGenerator for RemoteBackend {
    fn generate(&self, inputs: &[String], max_tokens: usize) -> BackendResult<Generation> {
        const EP: &str = "generate";
        let map = self.post(EP, json!({ "inputs": inputs, "max_tokens": max_tokens }))?;
        let text = str_field(&map, EP, "text")?;
        let truncated = match map.get("truncated") {
            None | Some(Value::Null) => false,
            Some(v) => v.as_bool().ok_or_else(|| protocol(EP, "truncated", "expected a boolean"))?,
        };
        Ok(Generation { text, truncated })
    }
}
