//! Branch-adaptive answering: ground the answer in fully-mapped paths, or
//! fall back to the model's own reasoning when no branch mapped every clue.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explorer::Branch;
use crate::kg_store::{Graph, GraphError, Triple};
use crate::llm::{py_tuple, LlmError, PromptKind, Session, Slots};

/// Returned in place of an answer when no call is left for answering.
pub const UNANSWERED: &str = "[unanswered]";

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    KgAugmented,
    CotFallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerContext {
    pub mode: AnswerMode,
    pub triples: Vec<Triple>,
    pub question: String,
}

impl AnswerContext {
    /// Mode follows from whether any triples are given.
    pub fn from_triples(triples: Vec<Triple>, question: &str) -> Self {
        let mode = if triples.is_empty() { AnswerMode::CotFallback } else { AnswerMode::KgAugmented };
        Self { mode, triples, question: question.to_string() }
    }
}

fn union_paths<'a>(branches: impl Iterator<Item = &'a Branch>) -> Vec<Triple> {
    let mut seen = std::collections::HashSet::new();
    let mut ordered: Vec<&Branch> = branches.collect();
    ordered.sort_by_key(|b| b.id);
    ordered.iter().flat_map(|b| b.path().iter().copied()).filter(|t| seen.insert(*t)).collect()
}

/// Union of the complete branches' paths (hop order within a branch,
/// branches by id), or a chain-of-thought context when none completed.
pub fn build_context(branches: &[Branch], question: &str) -> AnswerContext {
    AnswerContext::from_triples(union_paths(branches.iter().filter(|b| b.is_complete())), question)
}

/// Union of every branch's path regardless of outcome. Used when
/// branch-adaptive answering is switched off.
pub fn build_context_unfiltered(branches: &[Branch], question: &str) -> AnswerContext {
    AnswerContext::from_triples(union_paths(branches.iter()), question)
}

/// `[('h', 'r', 't'), ...]`
pub fn render_triples(g: &Graph, triples: &[Triple]) -> Result<String, GraphError> {
    let rendered: Vec<String> = triples
        .iter()
        .map(|t| g.labels_of(t).map(|(h, r, tl)| py_tuple(&[h, r, tl])))
        .collect::<Result<_, _>>()?;
    Ok(format!("[{}]", rendered.join(", ")))
}

/// Renders the answering prompt for `ctx`. A chain-of-thought context
/// renders an empty triplet list, which steers the model to its own knowledge.
pub fn answer_prompt(g: &Graph, ctx: &AnswerContext) -> Result<Slots, AnswerError> {
    if ctx.question.trim().is_empty() {
        return Err(AnswerError::EmptyQuestion);
    }
    let triplets = match ctx.mode {
        AnswerMode::KgAugmented => render_triples(g, &ctx.triples)?,
        AnswerMode::CotFallback => "[]".to_string(),
    };
    Ok(Slots::new().with("question", ctx.question.as_str()).with("triplets", triplets))
}

/// Asks the model; its text comes back verbatim. With no budget left the
/// [`UNANSWERED`] sentinel is returned instead.
pub fn answer(g: &Graph, ctx: &AnswerContext, session: &Session<'_>) -> Result<String, AnswerError> {
    let slots = answer_prompt(g, ctx)?;
    let req = session.render(PromptKind::Answering, &slots)?;
    match session.complete(&req) {
        Ok(response) => Ok(response.text),
        Err(LlmError::BudgetExceeded { .. }) => Ok(UNANSWERED.to_string()),
        Err(e) => Err(e.into()),
    }
}
