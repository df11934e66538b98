//! End-to-end runs over a QA set: extraction, exploration, answering and
//! scoring, with the ablation switches and clue-set perturbations applied.

mod metrics;
mod report;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{normalize, score_boolean, score_boolean_with, score_match, BooleanLexicon, Verdict};
pub use report::{merge_with_io, BranchStats, LabelTriple, QuestionRow, RunReport, Summary};

use crate::answerer::{self, AnswerContext, AnswerMode, UNANSWERED};
use crate::clue_state::{apply_variant, ClueSet, ClueVariant};
use crate::exec;
use crate::explorer::{self, Exploration, ExplorerConfig, MappingPolicy};
use crate::kg_store::{Graph, GraphError, LoadOptions, Triple};
use crate::llm::oracle::OracleBackend;
use crate::llm::scripted::ScriptedBackend;
use crate::llm::{parse_clues, ChatBackend, Gateway, LlmError, PromptKind, Session, Slots, TemplateSet};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("qa line {line}: {message}")]
    Qa { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("report: {0}")]
    Report(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    Boolean,
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub kind: QuestionKind,
    /// Clues the oracle backend returns for this question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clues: Option<Vec<String>>,
    /// What the oracle backend answers without graph evidence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_knowledge: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_path: Option<Vec<LabelTriple>>,
}

impl QAItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.answers.is_empty() {
            return Err(format!("item '{}' has no answers", self.id));
        }
        if self.kind == QuestionKind::Boolean {
            for a in &self.answers {
                a.parse::<Verdict>().map_err(|e| format!("item '{}': {e}", self.id))?;
            }
        }
        Ok(())
    }
}

/// Reads one JSON object per line; blank lines are skipped.
pub fn parse_qa(text: &str) -> Result<Vec<QAItem>, HarnessError> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let qa_err = |message: String| HarnessError::Qa { line: i + 1, message };
        let item: QAItem = serde_json::from_str(line).map_err(|e| qa_err(e.to_string()))?;
        item.validate().map_err(qa_err)?;
        items.push(item);
    }
    Ok(items)
}

pub fn load_qa(path: &Path) -> Result<Vec<QAItem>, HarnessError> {
    parse_qa(&std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    /// Token-overlap oracle seeded from the QA items' `clues` and `model_knowledge`.
    Oracle,
    Scripted(PathBuf),
    Http { endpoint: String, model: String, api_key_env: String },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub graph: PathBuf,
    pub qa: PathBuf,
    pub backend: BackendSpec,
    pub theta: u8,
    pub policy: MappingPolicy,
    pub branch_cap: Option<usize>,
    pub budget: u32,
    pub no_sr: bool,
    pub no_ams: bool,
    pub no_baa: bool,
    pub variant: ClueVariant,
    pub seed: u64,
    pub width: usize,
    /// Directory of prompt templates replacing the built-in English set.
    pub templates: Option<PathBuf>,
    pub load: LoadOptions,
    pub lexicon: BooleanLexicon,
}

impl RunConfig {
    pub fn new(graph: impl Into<PathBuf>, qa: impl Into<PathBuf>, backend: BackendSpec) -> Self {
        Self {
            graph: graph.into(),
            qa: qa.into(),
            backend,
            theta: 5,
            policy: MappingPolicy::All,
            branch_cap: None,
            budget: 30,
            no_sr: false,
            no_ams: false,
            no_baa: false,
            variant: ClueVariant::None,
            seed: 0,
            width: 1,
            templates: None,
            load: LoadOptions::default(),
            lexicon: BooleanLexicon::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.budget < 1 {
            return Err(HarnessError::Config("budget must be at least 1".into()));
        }
        if self.width < 1 {
            return Err(HarnessError::Config("width must be at least 1".into()));
        }
        if self.theta > 10 {
            return Err(HarnessError::Config("theta must lie in 0..=10".into()));
        }
        if self.branch_cap == Some(0) {
            return Err(HarnessError::Config("branch cap must be positive".into()));
        }
        Ok(())
    }

    pub fn explorer_config(&self) -> ExplorerConfig {
        ExplorerConfig {
            threshold: self.theta,
            policy: self.policy,
            branch_cap: self.branch_cap,
            stateful_record: !self.no_sr,
            adaptive_mapping: !self.no_ams,
            parallel: exec::PARALLEL && self.width > 1,
            ..ExplorerConfig::default()
        }
    }
}

/// An oracle primed with every item's clue list and fallback knowledge.
pub fn oracle_for(items: &[QAItem]) -> OracleBackend {
    items.iter().fold(OracleBackend::new(), |o, item| {
        let o = match &item.clues {
            Some(clues) => o.with_clues(&item.question, clues),
            None => o,
        };
        match &item.model_knowledge {
            Some(k) => o.with_knowledge(&item.question, k),
            None => o,
        }
    })
}

pub fn build_backend(spec: &BackendSpec, items: &[QAItem]) -> Result<Arc<dyn ChatBackend>, HarnessError> {
    match spec {
        BackendSpec::Oracle => Ok(Arc::new(oracle_for(items))),
        BackendSpec::Scripted(path) => Ok(Arc::new(ScriptedBackend::load(path)?)),
        #[cfg(feature = "http")]
        BackendSpec::Http { endpoint, model, api_key_env } => {
            use crate::llm::http::{HttpBackend, HttpOptions};
            Ok(Arc::new(HttpBackend::new(HttpOptions::new(endpoint, model).api_key_from_env(api_key_env))))
        }
        #[cfg(not(feature = "http"))]
        BackendSpec::Http { .. } => Err(HarnessError::Config("built without the http feature".into())),
    }
}

/// Loads everything named in `cfg` and runs it.
pub fn run(cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let graph = Graph::load(&cfg.graph, &cfg.load)?;
    let items = load_qa(&cfg.qa)?;
    let backend = build_backend(&cfg.backend, &items)?;
    let templates = match &cfg.templates {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::english(),
    };
    run_items(cfg, &graph, &items, &Gateway::with_templates(backend, templates))
}

/// Runs `items` against an already-built graph and gateway.
pub fn run_items(cfg: &RunConfig, g: &Graph, items: &[QAItem], gateway: &Gateway) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let explorer_cfg = cfg.explorer_config();
    let rows = exec::with_width(cfg.width, || {
        exec::map_ordered(items, cfg.width > 1, |item| run_question(cfg, &explorer_cfg, g, item, gateway))
    });
    Ok(RunReport::from_rows(rows))
}

/// Extraction with a single re-prompt when the reply has no parseable list.
/// An empty list is a valid answer and routes the question to fallback.
fn extract_clues(session: &Session<'_>, question: &str) -> Result<Vec<String>, LlmError> {
    let req = session.render(PromptKind::ClueExtraction, &Slots::new().with("sentence", question))?;
    match parse_clues(&session.complete(&req)?.text) {
        Ok(clues) => Ok(clues),
        Err(_) => parse_clues(&session.complete(&req)?.text),
    }
}

fn question_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a, so per-question seeds do not depend on run order
    id.bytes().fold(0xcbf2_9ce4_8422_2325 ^ seed, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn label_triple(g: &Graph, t: &Triple) -> Result<LabelTriple, GraphError> {
    let (h, r, tl) = g.labels_of(t)?;
    Ok([h.to_string(), r.to_string(), tl.to_string()])
}

fn label_path(g: &Graph, path: &[Triple]) -> Vec<LabelTriple> {
    path.iter().filter_map(|t| label_triple(g, t).ok()).collect()
}

/// One question end to end. Failures are recorded on the row.
pub fn run_question(
    cfg: &RunConfig,
    explorer_cfg: &ExplorerConfig,
    g: &Graph,
    item: &QAItem,
    gateway: &Gateway,
) -> QuestionRow {
    let started = Instant::now();
    let session = gateway.session(cfg.budget);
    let mut row = QuestionRow {
        id: item.id.clone(),
        question: item.question.clone(),
        kind: item.kind,
        answer: String::new(),
        mode: AnswerMode::CotFallback,
        unanswered: false,
        clues: vec![],
        starts: vec![],
        rounds: 0,
        branches: BranchStats::default(),
        complete_paths: vec![],
        context: vec![],
        gold_path_found: None,
        calls: Default::default(),
        wall_time_us: 0,
        partial: false,
        complete: false,
        boolean: None,
        error: None,
        notes: vec![],
        trace: vec![],
    };

    let texts = match extract_clues(&session, &item.question) {
        Ok(clues) => clues,
        Err(LlmError::BudgetExceeded { .. }) => vec![],
        Err(e @ LlmError::Unparseable(_)) => {
            row.notes.push(format!("clue extraction: {e}"));
            vec![]
        }
        Err(e) => {
            row.error = Some(format!("clue extraction: {e}"));
            vec![]
        }
    };

    let extracted = ClueSet::new(item.question.as_str(), texts);
    let sp_hits: Vec<_> = g.find_starting_points(extracted.clues()).into_iter().map(|(c, _)| c).collect();
    let clues = match apply_variant(&extracted, cfg.variant, question_seed(cfg.seed, &item.id), &sp_hits) {
        Ok(cs) => cs,
        Err(e) => {
            row.notes.push(format!("variant {} not applied: {e}", cfg.variant));
            extracted
        }
    };
    row.clues = clues.texts().iter().map(|s| s.to_string()).collect();

    let clues = Arc::new(clues);
    let starts = g.find_starting_points(clues.clues());
    row.starts = starts.iter().filter_map(|(_, e)| g.entity_label(*e).ok().map(str::to_string)).collect();

    let exploration = if row.error.is_none() && !starts.is_empty() {
        match explorer::explore_question(g, clues.clone(), &starts, &session, explorer_cfg) {
            Ok(x) => Some(x),
            Err(e) => {
                row.error = Some(format!("exploration: {e}"));
                None
            }
        }
    } else {
        None
    };
    let branches = exploration.as_ref().map(|x| x.branches.as_slice()).unwrap_or(&[]);
    if let Some(Exploration { trace, rounds, .. }) = &exploration {
        row.trace = trace.clone();
        row.rounds = *rounds;
    }
    row.branches = BranchStats {
        total: branches.len(),
        complete: branches.iter().filter(|b| b.is_complete()).count(),
        failed: branches.iter().fold(Default::default(), |mut m, b| {
            if let explorer::BranchStatus::Failed(reason) = b.status {
                *m.entry(format!("{reason}")).or_insert(0) += 1;
            }
            m
        }),
    };
    row.complete_paths = branches.iter().filter(|b| b.is_complete()).map(|b| label_path(g, b.path())).collect();
    row.gold_path_found = item.gold_path.as_ref().map(|gold| row.complete_paths.iter().any(|p| p == gold));

    let ctx: AnswerContext = if cfg.no_baa {
        answerer::build_context_unfiltered(branches, &item.question)
    } else {
        answerer::build_context(branches, &item.question)
    };
    row.mode = ctx.mode;
    row.context = label_path(g, &ctx.triples);
    if row.error.is_none() {
        match answerer::answer(g, &ctx, &session) {
            Ok(text) => {
                row.unanswered = text == UNANSWERED;
                row.answer = text;
            }
            Err(e) => row.error = Some(format!("answering: {e}")),
        }
    }

    if !row.unanswered && row.error.is_none() {
        let (partial, complete) = score_match(&row.answer, &item.answers);
        row.partial = partial;
        row.complete = complete;
        if item.kind == QuestionKind::Boolean {
            let gold = item.answers[0].parse::<Verdict>().unwrap_or(Verdict::Yes);
            row.boolean = Some(score_boolean_with(&cfg.lexicon, &row.answer, gold));
            row.partial = row.boolean == Some(true);
            row.complete = row.partial;
        }
    } else if item.kind == QuestionKind::Boolean {
        row.boolean = Some(false);
    }

    row.calls = session.ledger().snapshot();
    row.wall_time_us = started.elapsed().as_micros() as u64;
    row
}
