//! OpenAI-compatible chat-completions client.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, Message};

pub use super::DEFAULT_API_KEY_ENV;

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Attempts after the first one, on transport errors, 429 and 5xx.
    pub retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl HttpOptions {
    pub fn new(endpoint: &str, model: &str) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key: None,
            retries: 2,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads the bearer token from `var`, if set.
    pub fn api_key_from_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }
}

#[derive(Serialize)]
struct Body<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct HttpBackend {
    agent: ureq::Agent,
    options: HttpOptions,
}

impl HttpBackend {
    pub fn new(options: HttpOptions) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(options.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, options }
    }

    fn attempt(&self, req: &ChatRequest) -> Result<ChatResponse, (bool, String)> {
        let body = Body {
            model: &self.options.model,
            messages: &req.messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        };
        let mut call = self.agent.post(&self.options.endpoint);
        if let Some(key) = &self.options.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| (true, e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err((true, format!("http status {status}")));
        }
        if status >= 400 {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            return Err((false, format!("http status {status}: {detail}")));
        }
        let completion: Completion = response.body_mut().read_json().map_err(|e| (false, e.to_string()))?;
        let text = completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or((false, "response has no choices".to_string()))?;
        let usage = completion.usage.unwrap_or_default();
        Ok(ChatResponse { text, prompt_tokens: usage.prompt_tokens, completion_tokens: usage.completion_tokens })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(req) {
                Ok(r) => return Ok(r),
                Err((retryable, message)) => {
                    if !retryable || attempts > self.options.retries {
                        return Err(LlmError::Transport { attempts, message });
                    }
                    thread::sleep(self.options.backoff * attempts);
                }
            }
        }
    }

    fn name(&self) -> &str {
        "http"
    }
}
