//! Generation backends: an OpenAI-style chat endpoint and the scripted mock.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::mock::{mock_generate, MockConfig, MutationConfig};
use super::prompt::Message;
use super::{IcplError, Result};
use crate::envkit::EnvId;

pub const API_KEY_VAR: &str = "ICPL_API_KEY";
pub const API_BASE_VAR: &str = "ICPL_API_BASE";

pub struct GenerationRequest<'a> {
    pub messages: &'a [Message],
    /// Samples wanted.
    pub n: usize,
    /// Session-wide index of the first sample; sample `i` has index
    /// `first_call + i`.
    pub first_call: u64,
}

/// Produces raw completions; the program is taken from each text's first
/// fenced block. Backends may return fewer than `n` texts.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Vec<String>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    HttpChat {
        endpoint: String,
        model: String,
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    ScriptedMock {
        #[serde(default)]
        seed: u64,
        /// Template library; the session's environment when absent.
        #[serde(default)]
        library: Option<EnvId>,
        #[serde(default)]
        mutation: MutationConfig,
    },
}

fn default_temperature() -> f64 {
    1.0
}

fn default_timeout() -> u64 {
    120
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::ScriptedMock {
            seed: 0,
            library: None,
            mutation: MutationConfig::default(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            BackendConfig::HttpChat { endpoint, model, temperature, .. } => {
                if endpoint.is_empty() || model.is_empty() {
                    return Err(IcplError::ConfigInvalid("http backend needs an endpoint and a model".into()));
                }
                if !(temperature.is_finite() && *temperature >= 0.0) {
                    return Err(IcplError::ConfigInvalid("temperature must be non-negative".into()));
                }
            }
            BackendConfig::ScriptedMock { mutation, .. } => {
                let probs = [mutation.add_probability, mutation.remove_probability];
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || probs.iter().sum::<f64>() > 1.0 {
                    return Err(IcplError::ConfigInvalid("mutation probabilities must lie in [0, 1]".into()));
                }
                let widths = [mutation.weight_jitter, mutation.temperature_jitter, mutation.library_jitter];
                if widths.iter().any(|w| !(0.0..1.0).contains(w)) || mutation.max_edits == 0 {
                    return Err(IcplError::ConfigInvalid("jitter widths must lie in [0, 1) and max_edits >= 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BackendConfig::HttpChat { .. } => "http_chat",
            BackendConfig::ScriptedMock { .. } => "scripted_mock",
        }
    }
}

/// Builds the configured backend. The mock's seed is mixed with the
/// session seed so runs of a batch differ.
pub fn build_backend(cfg: &BackendConfig, env: EnvId, session_seed: u64) -> Box<dyn GenerationBackend> {
    match cfg {
        BackendConfig::HttpChat {
            endpoint,
            model,
            temperature,
            timeout_secs,
        } => Box::new(HttpChatBackend::from_env(endpoint, model, *temperature, *timeout_secs)),
        BackendConfig::ScriptedMock { seed, library, mutation } => Box::new(MockBackend {
            config: MockConfig {
                library: library.unwrap_or(env),
                mutation: mutation.clone(),
            },
            seed: crate::optcore::mix_seed(session_seed, *seed),
        }),
    }
}

pub struct MockBackend {
    pub config: MockConfig,
    pub seed: u64,
}

impl GenerationBackend for MockBackend {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Vec<String>> {
        let digest = digest(request.messages);
        Ok((0..request.n as u64)
            .map(|i| mock_generate(&self.config, &digest, self.seed, request.first_call + i))
            .collect())
    }
}

/// Concatenated message contents, the mock's view of the prompt.
pub fn digest(messages: &[Message]) -> String {
    messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
}

pub struct HttpChatBackend {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub api_key: Option<String>,
}

impl HttpChatBackend {
    /// Reads the key and an optional endpoint override from the environment.
    pub fn from_env(endpoint: &str, model: &str, temperature: f64, timeout_secs: u64) -> Self {
        HttpChatBackend {
            endpoint: std::env::var(API_BASE_VAR).unwrap_or_else(|_| endpoint.to_string()),
            model: model.to_string(),
            temperature,
            timeout: Duration::from_secs(timeout_secs),
            api_key: std::env::var(API_KEY_VAR).ok(),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<ContentField>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ContentField {
    Text(String),
    Blocks(Vec<ContentBlock>),
}

#[derive(Deserialize)]
struct ContentBlock {
    #[serde(default)]
    text: Option<String>,
}

impl ContentField {
    fn first_text(self) -> Option<String> {
        match self {
            ContentField::Text(t) => Some(t),
            ContentField::Blocks(b) => b.into_iter().find_map(|b| b.text),
        }
    }
}

impl GenerationBackend for HttpChatBackend {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Vec<String>> {
        let unavailable = |e: reqwest::Error| IcplError::BackendUnavailable(e.to_string());
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(unavailable)?;
        let url = format!("{}/chat/completions", self.endpoint.trim_end_matches('/'));
        let body = json!({
            "model": self.model,
            "messages": request.messages,
            "n": request.n,
            "temperature": self.temperature,
        });
        let mut req = client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(unavailable)?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(IcplError::BackendUnavailable(format!("status {status}: {text}")));
        }
        let parsed: ChatResponse = resp.json().map_err(unavailable)?;
        Ok(parsed
            .choices
            .into_iter()
            .filter_map(|c| c.message.content.and_then(ContentField::first_text))
            .collect())
    }
}

/// Contents of the first fenced code block, or the whole text when there
/// is none.
pub fn extract_program(text: &str) -> String {
    let Some(open) = text.find("```") else {
        return text.trim().to_string();
    };
    let after = &text[open + 3..];
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => return text.trim().to_string(),
    };
    match body.find("```") {
        Some(close) => body[..close].to_string(),
        None => body.to_string(),
    }
}
