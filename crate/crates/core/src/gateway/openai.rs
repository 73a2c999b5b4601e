//! Client for OpenAI-compatible chat-completion and embedding endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, GatewayError, GenerationRequest, GenerationResult, TokenLogprob};
use crate::fewshot::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenAiConfig {
    pub base_url: String,
    /// Environment variable holding the bearer token; unset means no auth.
    pub api_key_env: Option<String>,
    pub timeout_s: u64,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        OpenAiConfig {
            base_url: "http://localhost:8000".into(),
            api_key_env: None,
            timeout_s: 120,
        }
    }
}

pub struct OpenAiBackend {
    config: OpenAiConfig,
    id: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig) -> Result<Self, GatewayError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::InvalidRequest(format!("environment variable {var} with the API key is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s.max(1)))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(OpenAiBackend {
            id: format!("openai:{}", config.base_url),
            config,
            api_key,
            client,
        })
    }

    fn endpoint(&self, path: &str) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/{path}")
        } else {
            format!("{base}/v1/{path}")
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.client.post(self.endpoint(path)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let response = req.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Http {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::Compatibility(format!("response is not JSON: {e}")))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<WireToken>>,
}

#[derive(Deserialize)]
struct WireToken {
    token: String,
    logprob: f64,
    #[serde(default)]
    bytes: Option<Vec<u8>>,
}

/// Aligns wire tokens to the completion text. Token strings are used as is
/// when they concatenate to the text; otherwise the byte arrays are used,
/// giving each character to the token holding its first byte.
fn align_tokens(text: &str, wire: Vec<WireToken>) -> Result<Vec<TokenLogprob>, GatewayError> {
    let joined: String = wire.iter().map(|t| t.token.as_str()).collect();
    if joined == text {
        return Ok(wire
            .into_iter()
            .map(|t| TokenLogprob {
                token_text: t.token,
                logprob: t.logprob,
            })
            .collect());
    }
    let Some(byte_runs) = wire.iter().map(|t| t.bytes.as_ref()).collect::<Option<Vec<_>>>() else {
        return Err(GatewayError::Compatibility(
            "token strings do not reproduce the completion and no byte offsets were sent".into(),
        ));
    };
    let all: Vec<u8> = byte_runs.iter().flat_map(|b| b.iter().copied()).collect();
    if all != text.as_bytes() {
        return Err(GatewayError::Compatibility(
            "token bytes do not reproduce the completion text".into(),
        ));
    }
    let mut owner_of_byte = Vec::with_capacity(all.len());
    for (i, run) in byte_runs.iter().enumerate() {
        owner_of_byte.extend(std::iter::repeat_n(i, run.len()));
    }
    let mut texts = vec![String::new(); wire.len()];
    for (offset, ch) in text.char_indices() {
        texts[owner_of_byte[offset]].push(ch);
    }
    Ok(wire
        .into_iter()
        .zip(texts)
        .map(|(t, token_text)| TokenLogprob {
            token_text,
            logprob: t.logprob,
        })
        .collect())
}

fn parse_chat(body: Value, backend_id: &str) -> Result<GenerationResult, GatewayError> {
    let parsed: ChatResponse = serde_json::from_value(body)
        .map_err(|e| GatewayError::Compatibility(format!("unexpected chat response: {e}")))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Compatibility("response has no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let mut warnings = Vec::new();
    let tokens = match choice.logprobs.and_then(|l| l.content) {
        Some(wire) => align_tokens(&text, wire)?,
        None => {
            warnings.push(format!("backend `{backend_id}` returned no token logprobs"));
            Vec::new()
        }
    };
    Ok(GenerationResult {
        text,
        tokens,
        backend_id: backend_id.to_string(),
        cached: false,
        warnings,
    })
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

fn parse_embeddings(body: Value, model_id: &str, expected: usize) -> Result<Vec<EmbeddingVector>, GatewayError> {
    let mut parsed: EmbeddingResponse = serde_json::from_value(body)
        .map_err(|e| GatewayError::Compatibility(format!("unexpected embedding response: {e}")))?;
    if parsed.data.len() != expected {
        return Err(GatewayError::Compatibility(format!(
            "asked for {expected} embeddings, got {}",
            parsed.data.len()
        )));
    }
    parsed.data.sort_by_key(|d| d.index);
    parsed
        .data
        .into_iter()
        .map(|d| EmbeddingVector::new(d.embedding, model_id).map_err(|e| GatewayError::Compatibility(e.to_string())))
        .collect()
}

impl Backend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "max_tokens": request.max_new_tokens,
            "temperature": request.temperature,
            "logprobs": request.want_logprobs,
        });
        parse_chat(self.post("chat/completions", &body)?, &self.id)
    }

    fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let body = json!({ "model": model_id, "input": texts });
        parse_embeddings(self.post("embeddings", &body)?, model_id, texts.len())
    }
}
