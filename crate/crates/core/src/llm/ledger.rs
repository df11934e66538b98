use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatResponse, LlmError, PromptKind};

/// Admission ticket for one call. Obtained from [`CallLedger::acquire`] and
/// spent by exactly one `complete_with`.
#[derive(Debug)]
#[must_use = "a permit holds one unit of the call budget"]
pub struct Permit(());

/// Per-question call and token counters, updated atomically.
#[derive(Debug)]
pub struct CallLedger {
    budget: u32,
    admitted: AtomicU32,
    calls: [AtomicU64; 4],
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    llm_nanos: AtomicU64,
    clamped_scores: AtomicU64,
    failed_calls: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub clue_extraction: u64,
    pub relation_mapping: u64,
    pub entity_mapping: u64,
    pub answering: u64,
    pub total_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub llm_time_us: u64,
    pub clamped_scores: u64,
    pub failed_calls: u64,
}

impl LedgerSnapshot {
    pub fn calls(&self, kind: PromptKind) -> u64 {
        match kind {
            PromptKind::ClueExtraction => self.clue_extraction,
            PromptKind::RelationMapping => self.relation_mapping,
            PromptKind::EntityMapping => self.entity_mapping,
            PromptKind::Answering => self.answering,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    /// Counters accumulated since `earlier`.
    pub fn since(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        LedgerSnapshot {
            clue_extraction: self.clue_extraction - earlier.clue_extraction,
            relation_mapping: self.relation_mapping - earlier.relation_mapping,
            entity_mapping: self.entity_mapping - earlier.entity_mapping,
            answering: self.answering - earlier.answering,
            total_calls: self.total_calls - earlier.total_calls,
            prompt_tokens: self.prompt_tokens - earlier.prompt_tokens,
            completion_tokens: self.completion_tokens - earlier.completion_tokens,
            llm_time_us: self.llm_time_us - earlier.llm_time_us,
            clamped_scores: self.clamped_scores - earlier.clamped_scores,
            failed_calls: self.failed_calls - earlier.failed_calls,
        }
    }
}

impl CallLedger {
    pub fn new(budget: u32) -> Self {
        Self {
            budget,
            admitted: AtomicU32::new(0),
            calls: Default::default(),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
            llm_nanos: AtomicU64::new(0),
            clamped_scores: AtomicU64::new(0),
            failed_calls: AtomicU64::new(0),
        }
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn remaining(&self) -> u32 {
        self.budget.saturating_sub(self.admitted.load(Ordering::SeqCst))
    }

    pub fn acquire(&self) -> Result<Permit, LlmError> {
        self.admitted
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < self.budget).then_some(n + 1))
            .map(|_| Permit(()))
            .map_err(|_| LlmError::BudgetExceeded { budget: self.budget })
    }

    pub(crate) fn release(&self, _permit: Permit) {
        self.admitted.fetch_sub(1, Ordering::SeqCst);
    }

    pub(crate) fn record(
        &self,
        _permit: Permit,
        kind: PromptKind,
        response: Option<&ChatResponse>,
        elapsed: Duration,
    ) {
        self.calls[kind.slot()].fetch_add(1, Ordering::SeqCst);
        self.llm_nanos.fetch_add(elapsed.as_nanos() as u64, Ordering::SeqCst);
        match response {
            Some(r) => {
                self.prompt_tokens.fetch_add(r.prompt_tokens, Ordering::SeqCst);
                self.completion_tokens.fetch_add(r.completion_tokens, Ordering::SeqCst);
            }
            None => {
                self.failed_calls.fetch_add(1, Ordering::SeqCst);
            }
        }
    }

    /// Notes scores that fell outside 0..=10 and were clamped while parsing.
    pub fn note_clamped(&self, n: usize) {
        if n > 0 {
            self.clamped_scores.fetch_add(n as u64, Ordering::SeqCst);
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let calls: Vec<u64> = self.calls.iter().map(|c| c.load(Ordering::SeqCst)).collect();
        LedgerSnapshot {
            clue_extraction: calls[0],
            relation_mapping: calls[1],
            entity_mapping: calls[2],
            answering: calls[3],
            total_calls: calls.iter().sum(),
            prompt_tokens: self.prompt_tokens.load(Ordering::SeqCst),
            completion_tokens: self.completion_tokens.load(Ordering::SeqCst),
            llm_time_us: self.llm_nanos.load(Ordering::SeqCst) / 1_000,
            clamped_scores: self.clamped_scores.load(Ordering::SeqCst),
            failed_calls: self.failed_calls.load(Ordering::SeqCst),
        }
    }
}
