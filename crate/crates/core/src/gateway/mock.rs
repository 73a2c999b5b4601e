//! Deterministic backends for tests and offline runs.
//!
//! * `echo-gold` answers with the gold keyphrases of the prompted document
//!   joined by `", "`, every token at probability 0.5.
//! * `noisy-gold` answers the same phrases behind a conversational preamble
//!   with `"; \n* "` between them.
//! * `replay` serves recorded results from a response-cache file by key.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, CacheEntry, GatewayError, GenerationRequest, GenerationResult, TokenLogprob};
use crate::corpus::{load_split, Entry, LoadOptions};
use crate::fewshot::EmbeddingVector;
use crate::prompts::Role;

pub const NOISY_PREFIX: &str = "Sure, I'd be happy to help!\n";
const NOISY_SEPARATOR: &str = "; \n* ";
const HASHING_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockKind {
    EchoGold,
    NoisyGold,
    Replay,
}

impl MockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MockKind::EchoGold => "echo-gold",
            MockKind::NoisyGold => "noisy-gold",
            MockKind::Replay => "replay",
        }
    }
}

impl FromStr for MockKind {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "echo-gold" => Ok(MockKind::EchoGold),
            "noisy-gold" => Ok(MockKind::NoisyGold),
            "replay" => Ok(MockKind::Replay),
            other => Err(GatewayError::Fixture(format!("unknown mock backend `{other}`"))),
        }
    }
}

pub struct MockBackend {
    kind: MockKind,
    entries: Vec<Entry>,
    recorded: HashMap<String, GenerationResult>,
}

/// Builds a mock. For the gold mocks `fixture` is a dataset JSONL file
/// read with `options`; for `replay` it is a response-cache file.
pub fn make_mock_backend(kind: MockKind, fixture: &Path, options: &LoadOptions) -> Result<MockBackend, GatewayError> {
    match kind {
        MockKind::EchoGold | MockKind::NoisyGold => {
            let split = load_split(fixture, options).map_err(|e| GatewayError::Fixture(e.to_string()))?;
            Ok(MockBackend::gold(kind, split.entries))
        }
        MockKind::Replay => {
            if !fixture.exists() {
                return Err(GatewayError::Fixture(format!(
                    "replay fixture {} not found",
                    fixture.display()
                )));
            }
            let entries = super::cache::ResponseCache::open(fixture)?.entries()?;
            Ok(MockBackend::replay(entries))
        }
    }
}

impl MockBackend {
    pub fn gold(kind: MockKind, entries: Vec<Entry>) -> Self {
        assert!(kind != MockKind::Replay, "replay mocks are built from recorded entries");
        MockBackend {
            kind,
            entries,
            recorded: HashMap::new(),
        }
    }

    pub fn replay(entries: Vec<CacheEntry>) -> Self {
        MockBackend {
            kind: MockKind::Replay,
            entries: Vec::new(),
            recorded: entries.into_iter().map(|e| (e.key, e.value)).collect(),
        }
    }

    /// The fixture entry whose document text occurs in the final user
    /// message; the longest such text wins.
    fn target(&self, request: &GenerationRequest) -> Result<&Entry, GatewayError> {
        let prompt = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        self.entries
            .iter()
            .filter(|e| prompt.contains(&e.document.text))
            .fold(None, |best: Option<&Entry>, e| match best {
                Some(b) if b.document.text.len() >= e.document.text.len() => Some(b),
                _ => Some(e),
            })
            .ok_or_else(|| GatewayError::Fixture("prompt does not contain any fixture document".into()))
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        self.kind.as_str()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let text = match self.kind {
            MockKind::Replay => {
                let key = request.cache_key();
                return self.recorded.get(&key).cloned().ok_or(GatewayError::ReplayMiss(key));
            }
            MockKind::EchoGold => self.target(request)?.gold.keyphrases.join(", "),
            MockKind::NoisyGold => {
                format!(
                    "{NOISY_PREFIX}{}",
                    self.target(request)?.gold.keyphrases.join(NOISY_SEPARATOR)
                )
            }
        };
        let tokens = if request.want_logprobs {
            pseudo_tokenize(&text)
                .into_iter()
                .map(|token_text| TokenLogprob {
                    token_text,
                    logprob: 0.5f64.ln(),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(GenerationResult {
            text,
            tokens,
            backend_id: self.id().to_string(),
            cached: false,
            warnings: Vec::new(),
        })
    }

    fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if self.kind == MockKind::Replay {
            return Err(GatewayError::Unsupported {
                backend: self.id().to_string(),
                what: "embeddings (use a populated embedding cache)",
            });
        }
        Ok(texts.iter().map(|t| hashing_embedding(t, model_id)).collect())
    }
}

/// Splits text into tokens that concatenate back to it: each token is an
/// optional whitespace run followed by either a run of alphanumerics or a
/// single other character. Trailing whitespace forms its own token.
pub fn pseudo_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if in_word || (!current.is_empty() && !current.chars().all(char::is_whitespace)) {
                tokens.push(std::mem::take(&mut current));
            }
            in_word = false;
            current.push(ch);
        } else if ch.is_alphanumeric() {
            if !in_word && !current.is_empty() && !current.chars().all(char::is_whitespace) {
                tokens.push(std::mem::take(&mut current));
            }
            in_word = true;
            current.push(ch);
        } else {
            if !current.is_empty() && !current.chars().all(char::is_whitespace) {
                tokens.push(std::mem::take(&mut current));
            }
            current.push(ch);
            tokens.push(std::mem::take(&mut current));
            in_word = false;
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Feature-hashed bag of lowercase words, for offline runs of the closest
/// strategy. Texts without any word map to a fixed unit vector.
pub fn hashing_embedding(text: &str, model_id: &str) -> EmbeddingVector {
    let mut values = vec![0.0; HASHING_DIM];
    for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        let digest = Sha256::digest(word.to_lowercase().as_bytes());
        let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as usize % HASHING_DIM;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign;
    }
    if values.iter().all(|v| *v == 0.0) {
        values[0] = 1.0;
    }
    EmbeddingVector {
        values,
        model_id: model_id.to_string(),
    }
}
