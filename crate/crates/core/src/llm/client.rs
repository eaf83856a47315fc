use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ExtractionPrompt;
use crate::config::LlmEndpoint;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("endpoint returned HTTP {0}")]
    EndpointError(u16),
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatChoice {
    pub message: ChatReplyMessage,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatReplyMessage {
    pub content: Option<String>,
}

impl ChatRequest {
    pub fn new(prompt: &ExtractionPrompt, model: &str, temperature: f64) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: prompt.system.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: prompt.user.clone(),
                },
            ],
            temperature,
        }
    }
}

pub trait ChatClient: Sync {
    fn chat_complete(&self, prompt: &ExtractionPrompt) -> Result<String, LlmError>;
}

/// Blocking client for an OpenAI-style `/chat/completions` endpoint.
pub struct LlmClient {
    http: reqwest::blocking::Client,
    endpoint: LlmEndpoint,
    token: Option<String>,
    backoff: Duration,
}

impl LlmClient {
    /// The bearer token, if any, is read from the environment variable
    /// named by `endpoint.token_env`.
    pub fn new(endpoint: &LlmEndpoint) -> Result<Self, LlmError> {
        let token = std::env::var(&endpoint.token_env)
            .ok()
            .filter(|t| !t.is_empty());
        Self::with_token(endpoint, token)
    }

    pub fn with_token(endpoint: &LlmEndpoint, token: Option<String>) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(LlmClient {
            http,
            endpoint: endpoint.clone(),
            token,
            backoff: Duration::from_millis(200),
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &ChatRequest) -> Result<String, LlmError> {
        let mut req = self.http.post(self.endpoint.url.clone()).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(classify)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(LlmError::EndpointError(status.as_u16()));
        }
        let text = resp.text().map_err(classify)?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("no choices[0].message.content".into()))
    }
}

fn classify(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout
    } else {
        LlmError::Transport(e.to_string())
    }
}

fn is_transient(e: &LlmError) -> bool {
    match e {
        LlmError::EndpointError(status) => *status >= 500,
        LlmError::Timeout | LlmError::Transport(_) => true,
        LlmError::MalformedResponse(_) => false,
    }
}

impl ChatClient for LlmClient {
    fn chat_complete(&self, prompt: &ExtractionPrompt) -> Result<String, LlmError> {
        let body = ChatRequest::new(prompt, &self.endpoint.model, self.endpoint.temperature);
        let mut tries = 0u32;
        loop {
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err(e) if is_transient(&e) && tries < self.endpoint.max_retries => {
                    let wait = self.backoff * 2u32.pow(tries);
                    log::debug!("llm request failed ({e}); retrying in {wait:?}");
                    thread::sleep(wait);
                    tries += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
