//! Chat-completion style HTTP adapter.
//!
//! Request: `POST endpoint` with `{model, messages: [{role, content}],
//! temperature, max_tokens}`. Response: `{content, token_probability?}`.
//! Embeddings use a second endpoint: `{model, input}` in, `{embedding}` out.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AgentBackend, BackendError, Completion, CompletionRequest, Embedder};
use crate::model::EmbeddingVector;

pub const KEY_ENV: &str = "M3C_BACKEND_KEY";

fn default_timeout() -> u64 {
    60
}
fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Overridden by `M3C_BACKEND_KEY` when that is set.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// The endpoint returns `token_probability` for the first answer token.
    #[serde(default)]
    pub token_probability: bool,
    #[serde(default)]
    pub embedding_endpoint: Option<String>,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default)]
    pub embedding_dim: Option<usize>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout_secs: default_timeout(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            token_probability: false,
            embedding_endpoint: None,
            embedding_model: None,
            embedding_dim: None,
        }
    }

    /// Parses TOML, or JSON when `json` is set. The settings may sit at the
    /// top level or under a `backend` table.
    pub fn parse(text: &str, json: bool) -> Result<Self, BackendError> {
        let value: serde_json::Value = if json {
            serde_json::from_str(text).map_err(|e| BackendError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| BackendError::Config(e.to_string()))?
        };
        let section = value.get("backend").cloned().unwrap_or(value);
        let mut cfg: Self = serde_json::from_value(section).map_err(|e| BackendError::Config(e.to_string()))?;
        if let Ok(key) = std::env::var(KEY_ENV) {
            if !key.is_empty() {
                cfg.api_key = Some(key);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json)
    }

    fn client(&self) -> Result<reqwest::blocking::Client, BackendError> {
        reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
    #[serde(default)]
    token_probability: Option<f64>,
}

fn map_reqwest(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout(e.to_string())
    } else {
        BackendError::Transport(e.to_string())
    }
}

fn post_json<B: Serialize>(
    client: &reqwest::blocking::Client,
    url: &str,
    key: Option<&str>,
    body: &B,
) -> Result<String, BackendError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(map_reqwest)?;
    let status = resp.status();
    let text = resp.text().map_err(map_reqwest)?;
    if !status.is_success() {
        return Err(BackendError::Transport(format!("HTTP {status}: {text}")));
    }
    Ok(text)
}

/// Sends one chat request and returns the raw model output.
pub fn remote_call(
    config: &RemoteConfig,
    client: &reqwest::blocking::Client,
    messages: &[ChatMessage],
) -> Result<Completion, BackendError> {
    let body = ChatBody {
        model: &config.model,
        messages,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };
    let text = post_json(client, &config.endpoint, config.api_key.as_deref(), &body)?;
    let reply: ChatReply = serde_json::from_str(&text).map_err(|_| BackendError::Protocol {
        raw: text.clone(),
        expected: "{content, token_probability?}",
    })?;
    Ok(Completion { text: reply.content, token_probability: reply.token_probability })
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = config.client()?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }
}

impl AgentBackend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &request.system {
            messages.push(ChatMessage { role: Role::System, content: system.clone() });
        }
        messages.push(ChatMessage { role: Role::User, content: request.user.clone() });
        remote_call(&self.config, &self.client, &messages)
    }

    fn reports_token_probability(&self) -> bool {
        self.config.token_probability
    }
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f64>,
}

pub struct RemoteEmbedder {
    url: String,
    model: String,
    dim: usize,
    key: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(config: &RemoteConfig) -> Result<Self, BackendError> {
        let url = config
            .embedding_endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("embedding_endpoint is not set".into()))?;
        let dim = config
            .embedding_dim
            .ok_or_else(|| BackendError::Config("embedding_dim is not set".into()))?;
        Ok(Self {
            url,
            model: config.embedding_model.clone().unwrap_or_else(|| config.model.clone()),
            dim,
            key: config.api_key.clone(),
            client: config.client()?,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let raw = post_json(&self.client, &self.url, self.key.as_deref(), &EmbedBody { model: &self.model, input: text })?;
        let protocol = || BackendError::Protocol { raw: raw.clone(), expected: "{embedding: [number; dim]}" };
        let reply: EmbedReply = serde_json::from_str(&raw).map_err(|_| protocol())?;
        if reply.embedding.len() != self.dim {
            return Err(protocol());
        }
        EmbeddingVector::new(reply.embedding).map_err(|_| protocol())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_config_with_defaults() {
        let cfg = RemoteConfig::parse("endpoint = \"http://x/v1\"\nmodel = \"m\"\n", false).unwrap();
        assert_eq!(cfg.timeout_secs, 60);
        assert!(!cfg.token_probability);
        let nested = RemoteConfig::parse("[backend]\nendpoint = \"http://x\"\nmodel = \"m\"\ntimeout_secs = 5\n", false).unwrap();
        assert_eq!(nested.timeout_secs, 5);
    }

    #[test]
    fn json_config() {
        let cfg = RemoteConfig::parse(r#"{"endpoint":"http://x","model":"m","token_probability":true}"#, true).unwrap();
        assert!(cfg.token_probability);
        assert_eq!(RemoteConfig::parse("{}", true).unwrap_err().code(), "CONFIG");
    }

    #[test]
    fn wire_body_shape() {
        let msgs = [ChatMessage { role: Role::System, content: "s".into() }];
        let body = ChatBody { model: "m", messages: &msgs, temperature: 0.5, max_tokens: 9 };
        assert_eq!(
            serde_json::to_string(&body).unwrap(),
            r#"{"model":"m","messages":[{"role":"system","content":"s"}],"temperature":0.5,"max_tokens":9}"#
        );
    }
}
