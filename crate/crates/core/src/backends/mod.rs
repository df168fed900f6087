//! Model-service boundary.
//!
//! Every neural sub-model (question generation, question answering, NLI,
//! embeddings, span extraction and text generation) sits behind one of the
//! traits below. [`MockBackend`] implements all of them as deterministic
//! pure functions; [`RemoteBackend`] speaks the `/v1` JSON protocol.

mod mock;
mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{EmbedderKind, MockBackend};
pub use remote::{RemoteBackend, BACKEND_URL_ENV};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{endpoint}: transport failure after {attempts} attempt(s): {message}")]
    Transport { endpoint: String, attempts: usize, message: String },
    #[error("{endpoint}: HTTP {status}: {body}")]
    Http { endpoint: String, status: u16, body: String },
    #[error("{endpoint}: protocol error in field `{field}`: {message}")]
    Protocol { endpoint: String, field: String, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

pub type BackendResult<T> = Result<T, BackendError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaAnswer {
    pub answer: String,
    pub unanswerable: bool,
    pub confidence: f64,
}

impl QaAnswer {
    pub fn unanswerable(confidence: f64) -> Self {
        Self { answer: String::new(), unanswerable: true, confidence }
    }

    /// The answer text, or `None` when unanswerable or blank.
    pub fn text(&self) -> Option<&str> {
        if self.unanswerable || self.answer.trim().is_empty() {
            None
        } else {
            Some(&self.answer)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    /// Order of the probability vector on the wire.
    pub const ORDER: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entailment" => Some(Self::Entailment),
            "neutral" => Some(Self::Neutral),
            "contradiction" => Some(Self::Contradiction),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NliVerdict {
    pub label: NliLabel,
    /// Entailment, neutral, contradiction.
    pub probs: [f64; 3],
}

impl NliVerdict {
    /// Checks that the probabilities sum to one and the label is their
    /// argmax.
    pub fn new(label: NliLabel, probs: [f64; 3]) -> Result<Self, String> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(format!("probabilities {probs:?} do not form a distribution"));
        }
        let argmax = (0..3).fold(0, |best, i| if probs[i] > probs[best] { i } else { best });
        if NliLabel::ORDER[argmax] != label {
            return Err(format!("label {label:?} is not the argmax of {probs:?}"));
        }
        Ok(Self { label, probs })
    }

    /// A verdict with all mass on `label`; used for stubs.
    pub fn certain(label: NliLabel) -> Self {
        let mut probs = [0.0; 3];
        probs[NliLabel::ORDER.iter().position(|l| *l == label).unwrap()] = 1.0;
        Self { label, probs }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    Token,
    Sequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    /// The backend stopped at its token budget.
    #[serde(default)]
    pub truncated: bool,
}

pub trait QuestionGenerator: Send + Sync {
    /// Generates a question answered by the span `[start, end)` (character
    /// offsets) of `sentence`.
    fn question(&self, sentence: &str, start: usize, end: usize) -> BackendResult<String>;

    /// Turns an entity and an attribute name into a question.
    fn key_question(&self, entity: &str, key: &str) -> BackendResult<String>;
}

pub trait QuestionAnswerer: Send + Sync {
    fn answer(&self, question: &str, context: &str) -> BackendResult<QaAnswer>;
}

pub trait NliModel: Send + Sync {
    fn nli(&self, premise: &str, hypothesis: &str) -> BackendResult<NliVerdict>;
}

pub trait Embedder: Send + Sync {
    /// One vector per token of each text.
    fn embed_tokens(&self, texts: &[String]) -> BackendResult<Vec<Vec<Vec<f64>>>>;

    /// One pooled vector per text.
    fn embed_sequences(&self, texts: &[String]) -> BackendResult<Vec<Vec<f64>>>;
}

pub trait SpanExtractor: Send + Sync {
    /// Character-offset spans of answer candidates in `sentence`.
    fn spans(&self, sentence: &str) -> BackendResult<Vec<(usize, usize)>>;
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, inputs: &[String], max_tokens: usize) -> BackendResult<Generation>;
}

/// Where model calls go.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    Mock,
    Url(String),
}

impl std::str::FromStr for Endpoint {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("mock") {
            Ok(Endpoint::Mock)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Endpoint::Url(s.trim_end_matches('/').to_string()))
        } else {
            Err(BackendError::Config(format!("expected `mock` or an http(s) URL, got `{s}`")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: Endpoint,
    pub timeout_secs: f64,
    pub max_concurrency: usize,
    pub retries: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { endpoint: Endpoint::Mock, timeout_secs: 30.0, max_concurrency: 4, retries: 2 }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> BackendResult<()> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        if self.max_concurrency == 0 {
            return Err(BackendError::Config("concurrency must be at least 1".into()));
        }
        Ok(())
    }

    /// Mock unless the base URL environment variable is set.
    pub fn from_env() -> BackendResult<Self> {
        match std::env::var(BACKEND_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => Ok(Self { endpoint: url.parse()?, ..Self::default() }),
            _ => Ok(Self::default()),
        }
    }
}

/// The full set of model services used by evaluation and generation.
#[derive(Clone)]
pub struct Backends {
    pub qg: Arc<dyn QuestionGenerator>,
    pub qa: Arc<dyn QuestionAnswerer>,
    /// Without NLI, answer matching falls back to token F1.
    pub nli: Option<Arc<dyn NliModel>>,
    pub embed: Arc<dyn Embedder>,
    /// Without an extractor, the rule-based span fallback is used.
    pub spans: Option<Arc<dyn SpanExtractor>>,
    pub generate: Arc<dyn TextGenerator>,
}

impl Backends {
    pub fn mock() -> Self {
        Self::from_shared(Arc::new(MockBackend::default()))
    }

    fn from_shared<B>(backend: Arc<B>) -> Self
    where
        B: QuestionGenerator + QuestionAnswerer + NliModel + Embedder + SpanExtractor + TextGenerator + 'static,
    {
        Self {
            qg: backend.clone(),
            qa: backend.clone(),
            nli: Some(backend.clone()),
            embed: backend.clone(),
            spans: Some(backend.clone()),
            generate: backend,
        }
    }

    pub fn from_config(config: &BackendConfig) -> BackendResult<Self> {
        config.validate()?;
        match &config.endpoint {
            Endpoint::Mock => Ok(Self::mock()),
            Endpoint::Url(_) => Ok(Self::from_shared(Arc::new(RemoteBackend::new(config.clone())?))),
        }
    }
}
