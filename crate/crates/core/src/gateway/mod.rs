//! Uniform access to LLM backends: greedy chat completions with token
//! logprobs, embeddings, a persistent response cache and mock backends.

mod cache;
mod mock;
mod openai;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fewshot::EmbeddingVector;
use crate::prompts::{ChatMessage, Role};

pub use cache::{CacheEntry, EmbeddingCache, EmbeddingRecord, ResponseCache};
pub use mock::{hashing_embedding, make_mock_backend, pseudo_tokenize, MockBackend, MockKind};
pub use openai::{OpenAiBackend, OpenAiConfig};

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 512;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend compatibility: {0}")]
    Compatibility(String),
    #[error("replay cache has no entry for key {0}")]
    ReplayMiss(String),
    #[error("backend `{backend}` does not support {what}")]
    Unsupported { backend: String, what: &'static str },
    #[error("cache {path}: {message}")]
    Cache { path: String, message: String },
    #[error("mock fixture: {0}")]
    Fixture(String),
}

impl GatewayError {
    /// Transport failures, rate limiting and server errors are retried.
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub want_logprobs: bool,
}

impl GenerationRequest {
    /// Greedy request with logprobs and the default token budget.
    pub fn greedy(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        GenerationRequest {
            model_id: model_id.into(),
            messages,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: 0.0,
            want_logprobs: true,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.last() {
            None => return Err(GatewayError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::User => {
                return Err(GatewayError::InvalidRequest(
                    "final message must have the user role".into(),
                ))
            }
            _ => {}
        }
        if self.temperature != 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be 0 for greedy decoding, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON (sorted keys) of model, messages,
    /// token budget and temperature.
    pub fn cache_key(&self) -> String {
        let canonical = json!({
            "model_id": self.model_id,
            "messages": self.messages,
            "max_new_tokens": self.max_new_tokens,
            "temperature": self.temperature,
        });
        let mut hasher = Sha256::new();
        hasher.update(canonical_json(&canonical).as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Compact JSON with object keys sorted at every level, independent of how
/// serde_json was built.
pub fn canonical_json(value: &Value) -> String {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let fields: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", fields.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token_text: String,
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn probability(&self) -> f64 {
        self.logprob.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub tokens: Vec<TokenLogprob>,
    pub backend_id: String,
    #[serde(default)]
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl GenerationResult {
    /// Token texts must concatenate to the completion text exactly, and
    /// every logprob must be a log-probability.
    pub fn check_tokens(&self) -> Result<(), GatewayError> {
        if self.tokens.is_empty() {
            return Ok(());
        }
        let joined: String = self.tokens.iter().map(|t| t.token_text.as_str()).collect();
        if joined != self.text {
            return Err(GatewayError::Compatibility(format!(
                "token texts concatenate to {} bytes but the completion has {} bytes",
                joined.len(),
                self.text.len()
            )));
        }
        if let Some(t) = self.tokens.iter().find(|t| t.logprob > 0.0 || !t.logprob.is_finite()) {
            return Err(GatewayError::Compatibility(format!(
                "token {:?} has invalid logprob {}",
                t.token_text, t.logprob
            )));
        }
        Ok(())
    }
}

/// A source of completions and embeddings.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError>;

    fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let _ = (texts, model_id);
        Err(GatewayError::Unsupported {
            backend: self.id().to_string(),
            what: "embeddings",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Counting semaphore bounding in-flight backend calls.
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut slots = self.available.lock().expect("limiter poisoned");
            while *slots == 0 {
                slots = self.freed.wait(slots).expect("limiter poisoned");
            }
            *slots -= 1;
        }
        let out = f();
        *self.available.lock().expect("limiter poisoned") += 1;
        self.freed.notify_one();
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: usize,
    pub cache_hits: usize,
    pub backend_calls: usize,
}

impl GatewayStats {
    pub fn hit_ratio(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.cache_hits as f64 / self.requests as f64
        }
    }
}

pub const DEFAULT_MAX_CONCURRENCY: usize = 4;

/// Backend plus caches, retries and an in-flight bound.
pub struct Gateway {
    backend: Box<dyn Backend>,
    responses: Option<ResponseCache>,
    embeddings: Option<EmbeddingCache>,
    retry: RetryPolicy,
    limiter: Limiter,
    requests: AtomicUsize,
    hits: AtomicUsize,
    backend_calls: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Gateway {
            backend,
            responses: None,
            embeddings: None,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(DEFAULT_MAX_CONCURRENCY),
            requests: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_response_cache(mut self, cache: ResponseCache) -> Self {
        self.responses = Some(cache);
        self
    }

    pub fn with_response_cache_at(self, path: &Path) -> Result<Self, GatewayError> {
        Ok(self.with_response_cache(ResponseCache::open(path)?))
    }

    pub fn with_embedding_cache(mut self, cache: EmbeddingCache) -> Self {
        self.embeddings = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_concurrency(mut self, n: usize) -> Self {
        self.limiter = Limiter::new(n);
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.requests.load(Ordering::SeqCst),
            cache_hits: self.hits.load(Ordering::SeqCst),
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
        }
    }

    /// Serves from the cache when possible; otherwise calls the backend
    /// with retries and records the result before returning it.
    pub fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        request.validate()?;
        self.requests.fetch_add(1, Ordering::SeqCst);
        let key = request.cache_key();
        if let Some(hit) = self.responses.as_ref().and_then(|c| c.get(&key)) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        let mut result = self.with_retries(|| self.backend.complete(request))?;
        result.cached = false;
        if request.want_logprobs && result.tokens.is_empty() && result.warnings.is_empty() {
            result
                .warnings
                .push(format!("backend `{}` returned no token logprobs", self.backend.id()));
        }
        for w in &result.warnings {
            log::warn!("{w}");
        }
        result.check_tokens()?;
        if let Some(cache) = &self.responses {
            cache.put(&key, &result)?;
        }
        Ok(result)
    }

    /// One vector per text, in input order. Cached vectors are reused and
    /// only misses reach the backend.
    pub fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        let mut out: Vec<Option<EmbeddingVector>> = texts
            .iter()
            .map(|t| self.embeddings.as_ref().and_then(|c| c.get(model_id, t)))
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        // Dedupe before calling out so each distinct text is embedded once.
        let mut unique: Vec<String> = Vec::new();
        for &i in &missing {
            if !unique.contains(&texts[i]) {
                unique.push(texts[i].clone());
            }
        }
        if !unique.is_empty() {
            let mut fetched = Vec::with_capacity(unique.len());
            for chunk in unique.chunks(64) {
                let vectors = self.with_retries(|| self.backend.embed(chunk, model_id))?;
                if vectors.len() != chunk.len() {
                    return Err(GatewayError::Compatibility(format!(
                        "asked for {} embeddings, got {}",
                        chunk.len(),
                        vectors.len()
                    )));
                }
                fetched.extend(vectors);
            }
            if let Some(cache) = &self.embeddings {
                for (text, vector) in unique.iter().zip(&fetched) {
                    cache.put(text, vector)?;
                }
            }
            for i in missing {
                let at = unique.iter().position(|u| *u == texts[i]).expect("deduped");
                out[i] = Some(fetched[at].clone());
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }

    fn with_retries<T>(&self, call: impl Fn() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut delay = self.retry.initial_backoff;
        let mut attempt = 1;
        loop {
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.limiter.run(&call) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.retry.attempts => {
                    log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    struct Flaky {
        failures_left: Mutex<u32>,
        error: fn() -> GatewayError,
        calls: Arc<AtomicUsize>,
    }

    impl Backend for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }

        fn complete(&self, _: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut left = self.failures_left.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err((self.error)());
            }
            Ok(GenerationResult {
                text: "ok".into(),
                tokens: vec![TokenLogprob {
                    token_text: "ok".into(),
                    logprob: -0.1,
                }],
                backend_id: "flaky".into(),
                cached: false,
                warnings: vec![],
            })
        }
    }

    fn flaky(failures: u32, error: fn() -> GatewayError) -> (Gateway, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let backend = Flaky {
            failures_left: Mutex::new(failures),
            error,
            calls: calls.clone(),
        };
        let gw = Gateway::new(Box::new(backend)).with_retry(RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(1),
        });
        (gw, calls)
    }

    fn request() -> GenerationRequest {
        GenerationRequest::greedy("m", vec![ChatMessage::user("hi")])
    }

    #[test]
    fn retries_transport_errors() {
        let (gw, calls) = flaky(2, || GatewayError::Transport("reset".into()));
        assert_eq!(gw.complete(&request()).unwrap().text, "ok");
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let (gw, calls) = flaky(3, || GatewayError::Transport("reset".into()));
        assert!(matches!(gw.complete(&request()), Err(GatewayError::Transport(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (gw, calls) = flaky(1, || GatewayError::Http {
            status: 400,
            body: "bad".into(),
        });
        assert!(matches!(
            gw.complete(&request()),
            Err(GatewayError::Http { status: 400, .. })
        ));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn request_validation() {
        let mut r = request();
        r.temperature = 0.7;
        assert!(r.validate().is_err());
        let r = GenerationRequest::greedy("m", vec![]);
        assert!(r.validate().is_err());
        let r = GenerationRequest::greedy("m", vec![ChatMessage::user("a"), ChatMessage::assistant("b")]);
        assert!(r.validate().is_err());
        assert!(request().validate().is_ok());
    }

    #[test]
    fn cache_key_is_canonical() {
        let a = request();
        let mut b = request();
        b.want_logprobs = false;
        assert_eq!(a.cache_key(), b.cache_key());
        let mut c = request();
        c.max_new_tokens = 10;
        assert_ne!(a.cache_key(), c.cache_key());
        let d = GenerationRequest::greedy("other", a.messages.clone());
        assert_ne!(a.cache_key(), d.cache_key());
        assert_eq!(a.cache_key().len(), 64);
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v: Value = serde_json::from_str(r#"{"b":1,"a":{"d":[{"z":0,"y":"é"}],"c":null}}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":{"c":null,"d":[{"y":"é","z":0}]},"b":1}"#);
    }

    #[test]
    fn token_check() {
        let mut r = GenerationResult {
            text: "ab".into(),
            tokens: vec![
                TokenLogprob {
                    token_text: "a".into(),
                    logprob: -0.5,
                },
                TokenLogprob {
                    token_text: "b".into(),
                    logprob: 0.0,
                },
            ],
            backend_id: "x".into(),
            cached: false,
            warnings: vec![],
        };
        assert!(r.check_tokens().is_ok());
        r.tokens[1].token_text = "c".into();
        assert!(matches!(r.check_tokens(), Err(GatewayError::Compatibility(_))));
        r.tokens[1].token_text = "b".into();
        r.tokens[1].logprob = 0.2;
        assert!(r.check_tokens().is_err());
    }

    #[test]
    fn limiter_bounds_in_flight_calls() {
        let limiter = Arc::new(Limiter::new(2));
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        thread::scope(|s| {
            for _ in 0..8 {
                let (limiter, current, peak) = (limiter.clone(), current.clone(), peak.clone());
                s.spawn(move || {
                    limiter.run(|| {
                        let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                        peak.fetch_max(now, Ordering::SeqCst);
                        thread::sleep(Duration::from_millis(5));
                        current.fetch_sub(1, Ordering::SeqCst);
                    })
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
