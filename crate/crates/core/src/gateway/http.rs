use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionParams, LlmBackend};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpChatConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for HttpChatConfig {
    fn default() -> Self {
        HttpChatConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

impl HttpChatConfig {
    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
    }
}

/// Client for `POST {base_url}/chat/completions`. The prompt is sent as a
/// single user message.
pub struct HttpChatBackend {
    config: HttpChatConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f32,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChatBackend {
    pub fn new(config: HttpChatConfig) -> Result<Self, BackendError> {
        let api_key = config.api_key();
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(HttpChatBackend {
            config,
            api_key,
            client,
        })
    }
}

fn classify_status(status: reqwest::StatusCode) -> BackendError {
    match status.as_u16() {
        429 => BackendError::RateLimited,
        408 | 504 => BackendError::Timeout,
        s if s >= 500 => BackendError::Unavailable(format!("HTTP {status}")),
        _ => BackendError::Rejected(format!("HTTP {status}")),
    }
}

impl LlmBackend for HttpChatBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = ChatRequest {
            model: &params.model_id,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: params.temperature,
            max_tokens: params.max_output_tokens,
        };
        let mut req = self.client.post(&url).timeout(params.timeout()).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Unavailable(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(classify_status(status));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| BackendError::Unavailable(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Unavailable("response has no message content".into()))
    }

    fn name(&self) -> String {
        format!("http:{}", self.config.base_url)
    }
}
