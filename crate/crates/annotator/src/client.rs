use std::fmt;
use std::future::Future;
use std::pin::Pin;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const ENV_BASE_URL: &str = "CATLAB_API_BASE";
pub const ENV_API_KEY: &str = "CATLAB_API_KEY";
pub const ENV_MODEL: &str = "CATLAB_MODEL";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("endpoint configuration: {0}")]
    Config(String),
    #[error("request failed: {0}")]
    Http(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

pub type CompletionFuture<'a> = Pin<Box<dyn Future<Output = Result<Completion, TransportError>> + Send + 'a>>;

/// One-shot chat completion for a single user message.
pub trait ChatClient: Send + Sync {
    fn complete<'a>(&'a self, prompt: &'a str) -> CompletionFuture<'a>;
}

#[derive(Clone)]
pub struct EndpointConfig {
    /// Base URL up to and excluding `/chat/completions`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
}

impl fmt::Debug for EndpointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndpointConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            temperature: 0.0,
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads the base URL, key and model from the environment.
    pub fn from_env() -> Result<Self, TransportError> {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let base = get(ENV_BASE_URL).ok_or_else(|| TransportError::Config(format!("{ENV_BASE_URL} is not set")))?;
        let model = get(ENV_MODEL).ok_or_else(|| TransportError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = Self::new(base, model);
        cfg.api_key = get(ENV_API_KEY);
        Ok(cfg)
    }

    /// Replaces every occurrence of the API key in `text`.
    pub fn redact(&self, text: &str) -> String {
        match &self.api_key {
            Some(k) if !k.is_empty() => text.replace(k.as_str(), "<redacted>"),
            _ => text.to_string(),
        }
    }
}

/// Client for endpoints speaking the common `/chat/completions` JSON shape.
pub struct OpenAiClient {
    config: EndpointConfig,
    http: reqwest::Client,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct Response {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl OpenAiClient {
    pub fn new(config: EndpointConfig) -> Result<Self, TransportError> {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| TransportError::Config(config.redact(&e.to_string())))?;
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    async fn send(&self, prompt: &str) -> Result<Completion, TransportError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = Request {
            model: &self.config.model,
            messages: [Message { role: "user", content: prompt }],
            temperature: self.config.temperature,
        };
        let mut req = self.http.post(url).json(&body);
        if let Some(k) = &self.config.api_key {
            req = req.bearer_auth(k);
        }
        let redact = |e: reqwest::Error| TransportError::Http(self.config.redact(&e.to_string()));
        let resp = req.send().await.map_err(redact)?;
        let status = resp.status();
        let text = resp.text().await.map_err(redact)?;
        if !status.is_success() {
            let body: String = text.chars().take(500).collect();
            return Err(TransportError::Status { status: status.as_u16(), body: self.config.redact(&body) });
        }
        let parsed: Response =
            serde_json::from_str(&text).map_err(|e| TransportError::Decode(self.config.redact(&e.to_string())))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::Decode("no message content in first choice".into()))?;
        Ok(Completion {
            content: self.config.redact(&content),
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }
}

impl ChatClient for OpenAiClient {
    fn complete<'a>(&'a self, prompt: &'a str) -> CompletionFuture<'a> {
        Box::pin(self.send(prompt))
    }
}
