//! Replay backend: answers come from a prepared script instead of a model.
//!
//! A script is a JSON-lines file of [`ScriptRecord`]s. Each record is keyed by
//! prompt kind and the request's canonical key (its slot values joined with
//! `" | "`). A record whose key is `"*"` matches any request of its kind and
//! is used once the exact-key queue for that request is empty. Records are
//! consumed in file order unless marked `repeat`.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, PromptKind};

pub const WILDCARD_KEY: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub tag: PromptKind,
    #[serde(default = "wildcard")]
    pub key: String,
    pub response: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    /// Serve this record for every matching request instead of once.
    #[serde(default)]
    pub repeat: bool,
}

fn wildcard() -> String {
    WILDCARD_KEY.to_string()
}

impl ScriptRecord {
    pub fn new(tag: PromptKind, key: &str, response: &str, prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            tag,
            key: key.to_string(),
            response: response.to_string(),
            prompt_tokens,
            completion_tokens,
            repeat: false,
        }
    }

    /// A record matching any request of `tag`.
    pub fn any(tag: PromptKind, response: &str, prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self::new(tag, WILDCARD_KEY, response, prompt_tokens, completion_tokens)
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<(PromptKind, String), VecDeque<ScriptRecord>>>,
}

impl ScriptedBackend {
    pub fn new(records: Vec<ScriptRecord>) -> Self {
        let mut queues: HashMap<(PromptKind, String), VecDeque<ScriptRecord>> = HashMap::new();
        for r in records {
            queues.entry((r.tag, r.key.clone())).or_default().push_back(r);
        }
        Self { queues: Mutex::new(queues) }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::InvalidRequest(format!("reading script {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<ScriptRecord>(l)
                    .map_err(|e| LlmError::InvalidRequest(format!("script line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(records))
    }

    /// Records not yet consumed (repeating records count once).
    pub fn pending(&self) -> usize {
        self.queues.lock().expect("script lock").values().map(VecDeque::len).sum()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut queues = self.queues.lock().expect("script lock");
        let mut known = false;
        for key in [req.key.as_str(), WILDCARD_KEY] {
            if let Some(queue) = queues.get_mut(&(req.tag, key.to_string())) {
                known = true;
                let record = match queue.front() {
                    Some(r) if r.repeat => Some(r.clone()),
                    Some(_) => queue.pop_front(),
                    None => None,
                };
                if let Some(r) = record {
                    return Ok(ChatResponse {
                        text: r.response,
                        prompt_tokens: r.prompt_tokens,
                        completion_tokens: r.completion_tokens,
                    });
                }
            }
        }
        if known {
            Err(LlmError::ScriptExhausted { kind: req.tag, key: req.key.clone() })
        } else {
            Err(LlmError::ScriptMiss { kind: req.tag, key: req.key.clone() })
        }
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
