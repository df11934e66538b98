//! Chat-completion contract shared by every backend, plus prompt rendering,
//! response parsing and per-question call accounting.

mod ledger;
pub mod oracle;
pub mod parse;
pub mod scripted;
pub mod templates;

#[cfg(feature = "http")]
pub mod http;

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{CallLedger, LedgerSnapshot, Permit};
pub use parse::{parse_clues, parse_verdicts, Element, MappingVerdict, ParsedVerdicts};
pub use templates::{py_list, py_str, py_tuple, Slots, TemplateSet};

/// Environment variable the HTTP backend reads its bearer token from.
pub const DEFAULT_API_KEY_ENV: &str = "FISKE_API_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("call budget of {budget} exceeded")]
    BudgetExceeded { budget: u32 },
    #[error("script exhausted for {kind} key '{key}'")]
    ScriptExhausted { kind: PromptKind, key: String },
    #[error("no scripted response for {kind} key '{key}'")]
    ScriptMiss { kind: PromptKind, key: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("template for {kind} is missing slot(s): {}", missing.join(", "))]
    MissingSlots { kind: PromptKind, missing: Vec<String> },
    #[error("template error: {0}")]
    Template(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unparseable response: {0}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ClueExtraction,
    RelationMapping,
    EntityMapping,
    Answering,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] =
        [PromptKind::ClueExtraction, PromptKind::RelationMapping, PromptKind::EntityMapping, PromptKind::Answering];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::ClueExtraction => "clue_extraction",
            PromptKind::RelationMapping => "relation_mapping",
            PromptKind::EntityMapping => "entity_mapping",
            PromptKind::Answering => "answering",
        }
    }

    /// Named slots in the order their `{}` placeholders appear.
    pub fn slot_names(&self) -> &'static [&'static str] {
        match self {
            PromptKind::ClueExtraction => &["sentence"],
            PromptKind::RelationMapping => &["sentence", "target_information", "relations"],
            PromptKind::EntityMapping => &["sentence", "information", "candidates"],
            PromptKind::Answering => &["question", "triplets"],
        }
    }

    pub(crate) fn slot(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown prompt kind '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: PromptKind,
    /// Slot values joined with `" | "`; replay scripts are keyed on it.
    pub key: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(LlmError::InvalidRequest("at least one user message is required".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!("temperature {} is negative", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Content of the last user message.
    pub fn user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;

    fn name(&self) -> &str;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayOptions {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 512 }
    }
}

/// A backend plus the templates used to talk to it.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    templates: Arc<TemplateSet>,
    options: GatewayOptions,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("backend", &self.backend.name()).field("options", &self.options).finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self::with_templates(backend, TemplateSet::english())
    }

    pub fn with_templates(backend: Arc<dyn ChatBackend>, templates: TemplateSet) -> Self {
        Self { backend, templates: Arc::new(templates), options: GatewayOptions::default() }
    }

    pub fn options(mut self, options: GatewayOptions) -> Self {
        self.options = options;
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn render(&self, kind: PromptKind, slots: &Slots) -> Result<ChatRequest, LlmError> {
        let mut req = self.templates.render(kind, slots)?;
        req.temperature = self.options.temperature;
        req.max_tokens = self.options.max_tokens;
        Ok(req)
    }

    /// Opens a per-question session with its own ledger and call cap.
    pub fn session(&self, budget: u32) -> Session<'_> {
        Session { gateway: self, ledger: CallLedger::new(budget) }
    }
}

/// One question's view of the gateway. Shareable across branch workers.
pub struct Session<'g> {
    gateway: &'g Gateway,
    ledger: CallLedger,
}

impl<'g> Session<'g> {
    pub fn gateway(&self) -> &'g Gateway {
        self.gateway
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    pub fn render(&self, kind: PromptKind, slots: &Slots) -> Result<ChatRequest, LlmError> {
        self.gateway.render(kind, slots)
    }

    /// Claims one call from the budget.
    pub fn acquire(&self) -> Result<Permit, LlmError> {
        self.ledger.acquire()
    }

    pub fn remaining(&self) -> u32 {
        self.ledger.remaining()
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let permit = self.acquire()?;
        self.complete_with(permit, req)
    }

    /// Issues a call that was already admitted by [`Session::acquire`].
    pub fn complete_with(&self, permit: Permit, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if let Err(e) = req.validate() {
            self.ledger.release(permit);
            return Err(e);
        }
        let started = Instant::now();
        let result = self.gateway.backend.complete(req);
        self.ledger.record(permit, req.tag, result.as_ref().ok(), started.elapsed());
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::scripted::{ScriptRecord, ScriptedBackend};

    fn scripted(records: Vec<ScriptRecord>) -> Gateway {
        Gateway::new(Arc::new(ScriptedBackend::new(records)))
    }

    fn extraction_slots(q: &str) -> Slots {
        Slots::new().with("sentence", q)
    }

    #[test]
    fn single_entry_script_then_exhausted() {
        let gw = scripted(vec![ScriptRecord::any(PromptKind::ClueExtraction, "entities: ['a']", 10, 2)]);
        let session = gw.session(30);
        let req = session.render(PromptKind::ClueExtraction, &extraction_slots("q?")).unwrap();
        assert_eq!(session.complete(&req).unwrap().text, "entities: ['a']");
        let err = session.complete(&req).unwrap_err();
        assert!(err.to_string().contains("script exhausted"), "{err}");
    }

    #[test]
    fn ledger_counts_every_call() {
        let records = (0..5)
            .map(|i| ScriptRecord::any(PromptKind::Answering, &format!("r{i}"), 3, i))
            .collect();
        let gw = scripted(records);
        let session = gw.session(30);
        let req = session
            .render(PromptKind::Answering, &Slots::new().with("question", "q").with("triplets", "[]"))
            .unwrap();
        for _ in 0..5 {
            session.complete(&req).unwrap();
        }
        let snap = session.ledger().snapshot();
        assert_eq!(snap.total_calls, 5);
        assert_eq!(snap.answering, 5);
        assert_eq!(snap.prompt_tokens, 15);
        assert_eq!(snap.completion_tokens, 10);
    }

    #[test]
    fn budget_is_a_hard_cap() {
        let records = (0..5).map(|_| ScriptRecord::any(PromptKind::ClueExtraction, "x", 1, 1)).collect();
        let gw = scripted(records);
        let session = gw.session(2);
        let req = session.render(PromptKind::ClueExtraction, &extraction_slots("q")).unwrap();
        session.complete(&req).unwrap();
        session.complete(&req).unwrap();
        assert_eq!(session.complete(&req).unwrap_err(), LlmError::BudgetExceeded { budget: 2 });
        assert_eq!(session.ledger().snapshot().total_calls, 2);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let gw = scripted(vec![]);
        let session = gw.session(5);
        let mut req = session.render(PromptKind::ClueExtraction, &extraction_slots("q")).unwrap();
        req.temperature = -1.0;
        assert!(matches!(session.complete(&req), Err(LlmError::InvalidRequest(_))));
        req.temperature = 0.0;
        req.messages[0].role = Role::System;
        assert!(matches!(session.complete(&req), Err(LlmError::InvalidRequest(_))));
    }
}
