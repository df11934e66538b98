//! Fine-grained, stateful knowledge-graph exploration for question answering.
//!
//! A question is decomposed by a language model into atomic clues. Clues that
//! lexically match graph entities anchor exploration; from there each branch
//! maps the remaining clues onto relations and entities hop by hop, keeping a
//! record of which clues it has already used. Branches that map every clue
//! ground the final answer; if none does, the model answers on its own.
//!
//! Modules, bottom-up:
//!
//! - [`kg_store`]: indexed in-memory triple store and starting-point lookup
//! - [`clue_state`]: clues, per-branch exploration state, clue-set perturbations
//! - [`llm`]: chat backends, prompt templates, response parsing, call ledger
//! - [`explorer`]: the per-branch mapping state machine and round scheduling
//! - [`answerer`]: branch-adaptive answering
//! - [`harness`]: end-to-end runs, metrics, ablations and reports

pub mod answerer;
pub mod clue_state;
pub mod exec;
pub mod explorer;
pub mod harness;
pub mod kg_store;
pub mod llm;

pub use answerer::{AnswerContext, AnswerMode};
pub use clue_state::{Clue, ClueSet, ClueVariant, ExplorationState};
pub use explorer::{Branch, BranchStatus, ExplorerConfig, FailReason, MappingPolicy};
pub use kg_store::{EntityId, Graph, LoadOptions, RelationId, Triple};
pub use llm::{ChatBackend, Gateway, PromptKind};
