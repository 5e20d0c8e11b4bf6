//! OpenAI-compatible HTTP providers (`/embeddings`, `/chat/completions`).
//!
//! Configured from the environment:
//!
//! | variable | meaning |
//! |---|---|
//! | `URAG_EMBED_BASE_URL`, `URAG_EMBED_API_KEY`, `URAG_EMBED_MODEL` | embedding endpoint |
//! | `URAG_GEN_BASE_URL`, `URAG_GEN_API_KEY`, `URAG_GEN_MODEL` | generation endpoint |
//! | `URAG_PROVIDER_TIMEOUT_SECS` | per-call timeout, default 30 |
//!
//! Base URLs include the API prefix, e.g. `http://localhost:8000/v1`.
//! Transient failures (connection errors, timeouts, 429, 5xx) are retried once.

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Embedder, EmbedderSpec, Generator, GeneratorSpec, ProviderError};
use crate::model::EmbeddingVector;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const RETRY_DELAY: Duration = Duration::from_millis(200);

#[derive(Clone, PartialEq)]
pub struct Endpoint {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
}

// The key is never printed, so endpoints can be logged freely.
impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .field("retries", &self.retries)
            .finish()
    }
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            api_key: None,
            model: model.into(),
            timeout: DEFAULT_TIMEOUT,
            retries: 1,
        }
    }

    /// Reads `URAG_<PREFIX>_BASE_URL` and friends; `None` when no base URL is set.
    pub fn from_env(prefix: &str) -> Option<Self> {
        let var = |name: &str| std::env::var(format!("URAG_{prefix}_{name}")).ok().filter(|v| !v.is_empty());
        let base_url = var("BASE_URL")?;
        let mut ep = Endpoint::new(base_url, var("MODEL").unwrap_or_else(|| "default".to_owned()));
        ep.api_key = var("API_KEY");
        if let Some(secs) = std::env::var("URAG_PROVIDER_TIMEOUT_SECS")
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
        {
            ep.timeout = Duration::from_secs_f64(secs);
        }
        Some(ep)
    }

    fn client(&self) -> Result<Client, ProviderError> {
        Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| ProviderError::Unreachable(e.to_string()))
    }

    fn post<T: Serialize>(&self, client: &Client, path: &str, body: &T) -> Result<Response, ProviderError> {
        let url = format!("{}/{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            let mut req = client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let transient = match req.send() {
                Ok(resp) if resp.status().is_success() => return Ok(resp),
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if is_token_limit(status, &text) {
                        return Err(ProviderError::TokenLimitExceeded);
                    }
                    if status != StatusCode::TOO_MANY_REQUESTS && !status.is_server_error() {
                        return Err(ProviderError::InvalidResponse(format!("{status}: {}", truncate(&text, 200))));
                    }
                    format!("{status}")
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.retries {
                return Err(ProviderError::Unreachable(transient));
            }
            attempt += 1;
            tracing::debug!(%url, attempt, error = %transient, "retrying provider call");
            std::thread::sleep(RETRY_DELAY);
        }
    }
}

fn is_token_limit(status: StatusCode, body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    status == StatusCode::PAYLOAD_TOO_LARGE
        || (status == StatusCode::BAD_REQUEST
            && (lower.contains("context_length_exceeded")
                || lower.contains("maximum context length")
                || lower.contains("too many tokens")))
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

pub struct RemoteEmbedder {
    endpoint: Endpoint,
    spec: EmbedderSpec,
    client: Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: Endpoint, spec: EmbedderSpec) -> Result<Self, ProviderError> {
        let client = endpoint.client()?;
        Ok(Self { endpoint, spec, client })
    }

    fn checked(&self, values: Vec<f32>) -> Result<EmbeddingVector, ProviderError> {
        if values.len() != self.spec.dimension {
            return Err(ProviderError::DimensionMismatch {
                expected: self.spec.dimension,
                got: values.len(),
            });
        }
        EmbeddingVector::new(values).map_err(|e| ProviderError::InvalidResponse(e.to_string()))
    }
}

impl Embedder for RemoteEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.embed_batch(&[text])?
            .pop()
            .ok_or_else(|| ProviderError::InvalidResponse("no embedding returned".into()))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(ProviderError::EmptyInput);
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.endpoint.model, "input": texts });
        let resp: EmbeddingResponse = self
            .endpoint
            .post(&self.client, "embeddings", &body)?
            .json()
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        if resp.data.len() != texts.len() {
            return Err(ProviderError::InvalidResponse(format!(
                "{} embeddings for {} inputs",
                resp.data.len(),
                texts.len()
            )));
        }
        let mut items = resp.data;
        items.sort_by_key(|i| i.index.unwrap_or(usize::MAX));
        items.into_iter().map(|i| self.checked(i.embedding)).collect()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct RemoteGenerator {
    endpoint: Endpoint,
    client: Client,
}

impl RemoteGenerator {
    pub fn new(endpoint: Endpoint) -> Result<Self, ProviderError> {
        let client = endpoint.client()?;
        Ok(Self { endpoint, client })
    }
}

impl Generator for RemoteGenerator {
    fn name(&self) -> &str {
        &self.endpoint.model
    }

    fn generate(&self, prompt: &str, spec: &GeneratorSpec) -> Result<String, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let body = json!({
            "model": self.endpoint.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": spec.temperature,
            "top_p": spec.top_p,
            "top_k": spec.top_k,
            "max_tokens": spec.max_new_tokens,
        });
        let resp: ChatResponse = self
            .endpoint
            .post(&self.client, "chat/completions", &body)?
            .json()
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(ProviderError::InvalidResponse("empty completion".into()));
        }
        Ok(text)
    }
}
