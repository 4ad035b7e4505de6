//! JSON-over-HTTP clients for the three provider boundaries.
//!
//! * embeddings: `POST {"texts": [..]}` -> `{"embeddings": [[..], ..]}`
//! * pair scores: `POST {"pairs": [[query, passage], ..]}` -> `{"scores": [..]}`
//! * completions: OpenAI-style `POST {base}/chat/completions`

use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dense::EmbeddingProvider;
use crate::provider::ProviderError;
use crate::ragflow::{CompletionRequest, LlmProvider};
use crate::rerank::PairScorer;

/// Where a remote provider lives. Tokens are never part of this; they are
/// read from the environment variable named in `token_env`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub url: String,
    /// Model name sent with requests and used as the provider id.
    pub model: String,
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

impl Endpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            token_env: None,
            timeout_secs: default_timeout_secs(),
        }
    }

    fn token(&self) -> Result<Option<String>, ProviderError> {
        match &self.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ProviderError::Other(format!("environment variable {var} is not set"))),
        }
    }
}

struct JsonClient {
    endpoint: Endpoint,
    client: Client,
}

impl JsonClient {
    fn new(endpoint: Endpoint) -> Result<Self, ProviderError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self { endpoint, client })
    }

    fn post<R: for<'de> Deserialize<'de>>(&self, url: &str, body: &serde_json::Value) -> Result<R, ProviderError> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = self.endpoint.token()? {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Protocol(e.to_string()))
    }
}

pub struct HttpEmbedder {
    inner: JsonClient,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: Endpoint, dimension: usize) -> Result<Self, ProviderError> {
        Ok(Self {
            inner: JsonClient::new(endpoint)?,
            dimension,
        })
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        &self.inner.endpoint.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let body = json!({ "model": self.inner.endpoint.model, "texts": texts });
        let r: EmbedResponse = self.inner.post(&self.inner.endpoint.url, &body)?;
        Ok(r.embeddings)
    }
}

pub struct HttpPairScorer {
    inner: JsonClient,
}

impl HttpPairScorer {
    pub fn new(endpoint: Endpoint) -> Result<Self, ProviderError> {
        Ok(Self {
            inner: JsonClient::new(endpoint)?,
        })
    }
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

impl PairScorer for HttpPairScorer {
    fn id(&self) -> &str {
        &self.inner.endpoint.model
    }

    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ProviderError> {
        let pairs: Vec<[&str; 2]> = pairs.iter().map(|(q, p)| [q.as_str(), p.as_str()]).collect();
        let body = json!({ "model": self.inner.endpoint.model, "pairs": pairs });
        let r: ScoreResponse = self.inner.post(&self.inner.endpoint.url, &body)?;
        Ok(r.scores)
    }
}

/// Chat-completions client; `url` is the API base (e.g. `https://host/v1`).
pub struct ChatLlm {
    inner: JsonClient,
}

impl ChatLlm {
    pub fn new(endpoint: Endpoint) -> Result<Self, ProviderError> {
        Ok(Self {
            inner: JsonClient::new(endpoint)?,
        })
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

impl LlmProvider for ChatLlm {
    fn id(&self) -> &str {
        &self.inner.endpoint.model
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.inner.endpoint.model,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_tokens,
        });
        let url = format!("{}/chat/completions", self.inner.endpoint.url.trim_end_matches('/'));
        let r: ChatResponse = self.inner.post(&url, &body)?;
        r.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Protocol("response has no message content".into()))
    }
}
