//! Per-question rows, recomputable aggregates, and the JSON-lines format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, QuestionKind};
use crate::answerer::AnswerMode;
use crate::explorer::HopRecord;
use crate::llm::LedgerSnapshot;

/// A triple by label.
pub type LabelTriple = [String; 3];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchStats {
    pub total: usize,
    pub complete: usize,
    /// Failed branches by reason.
    pub failed: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub id: String,
    pub question: String,
    pub kind: QuestionKind,
    pub answer: String,
    pub mode: AnswerMode,
    /// No call was left for answering.
    pub unanswered: bool,
    pub clues: Vec<String>,
    pub starts: Vec<String>,
    pub rounds: usize,
    pub branches: BranchStats,
    pub complete_paths: Vec<Vec<LabelTriple>>,
    /// Triples handed to the answering prompt.
    pub context: Vec<LabelTriple>,
    /// Whether some complete path equals the item's gold path, when it has one.
    pub gold_path_found: Option<bool>,
    pub calls: LedgerSnapshot,
    pub wall_time_us: u64,
    pub partial: bool,
    pub complete: bool,
    /// Set for boolean items only.
    pub boolean: Option<bool>,
    pub error: Option<String>,
    pub notes: Vec<String>,
    pub trace: Vec<HopRecord>,
}

impl QuestionRow {
    /// Boolean items count when the yes/no label is right; query items on a
    /// partial match.
    pub fn correct(&self) -> bool {
        self.boolean.unwrap_or(self.partial)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub questions: usize,
    pub errors: usize,
    pub query_questions: usize,
    pub boolean_questions: usize,
    /// Over query items.
    pub partial_rate: f64,
    pub complete_rate: f64,
    /// Over boolean items.
    pub boolean_accuracy: f64,
    /// Over all items, see [`QuestionRow::correct`].
    pub accuracy: f64,
    pub kg_augmented: usize,
    pub cot_fallback: usize,
    pub unanswered: usize,
    pub avg_calls: f64,
    pub max_calls: u64,
    pub avg_tokens: f64,
    pub avg_llm_time_ms: f64,
    pub avg_total_time_ms: f64,
}

fn rate(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

impl Summary {
    pub fn from_rows(rows: &[QuestionRow]) -> Self {
        let n = rows.len();
        let query: Vec<&QuestionRow> = rows.iter().filter(|r| r.kind == QuestionKind::Query).collect();
        let boolean: Vec<&QuestionRow> = rows.iter().filter(|r| r.kind == QuestionKind::Boolean).collect();
        let mean = |f: &dyn Fn(&QuestionRow) -> f64| rate(1, n) * rows.iter().map(f).sum::<f64>();
        Self {
            questions: n,
            errors: rows.iter().filter(|r| r.error.is_some()).count(),
            query_questions: query.len(),
            boolean_questions: boolean.len(),
            partial_rate: rate(query.iter().filter(|r| r.partial).count(), query.len()),
            complete_rate: rate(query.iter().filter(|r| r.complete).count(), query.len()),
            boolean_accuracy: rate(boolean.iter().filter(|r| r.boolean == Some(true)).count(), boolean.len()),
            accuracy: rate(rows.iter().filter(|r| r.correct()).count(), n),
            kg_augmented: rows.iter().filter(|r| r.mode == AnswerMode::KgAugmented).count(),
            cot_fallback: rows.iter().filter(|r| r.mode == AnswerMode::CotFallback).count(),
            unanswered: rows.iter().filter(|r| r.unanswered).count(),
            avg_calls: mean(&|r| r.calls.total_calls as f64),
            max_calls: rows.iter().map(|r| r.calls.total_calls).max().unwrap_or(0),
            avg_tokens: mean(&|r| r.calls.total_tokens() as f64),
            avg_llm_time_ms: mean(&|r| r.calls.llm_time_us as f64 / 1000.0),
            avg_total_time_ms: mean(&|r| r.wall_time_us as f64 / 1000.0),
        }
    }

    /// Aggregates as an aligned two-column table.
    pub fn table(&self) -> String {
        let rows: Vec<(&str, String)> = vec![
            ("questions", self.questions.to_string()),
            ("errors", self.errors.to_string()),
            ("query / boolean", format!("{} / {}", self.query_questions, self.boolean_questions)),
            ("partial match", pct(self.partial_rate)),
            ("complete match", pct(self.complete_rate)),
            ("true/false accuracy", pct(self.boolean_accuracy)),
            ("overall accuracy", pct(self.accuracy)),
            ("kg / cot / unanswered", format!("{} / {} / {}", self.kg_augmented, self.cot_fallback, self.unanswered)),
            ("avg llm calls", format!("{:.2}", self.avg_calls)),
            ("max llm calls", self.max_calls.to_string()),
            ("avg tokens", format!("{:.1}", self.avg_tokens)),
            ("avg llm time (ms)", format!("{:.2}", self.avg_llm_time_ms)),
            ("avg total time (ms)", format!("{:.2}", self.avg_total_time_ms)),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>12}");
        }
        out
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<QuestionRow>,
    pub summary: Summary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Row(Box<QuestionRow>),
    Summary(Summary),
}

impl RunReport {
    /// Sorts rows by id and computes the summary.
    pub fn from_rows(mut rows: Vec<QuestionRow>) -> Self {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        let summary = Summary::from_rows(&rows);
        Self { rows, summary }
    }

    /// True when the stored summary equals one recomputed from the rows.
    pub fn is_consistent(&self) -> bool {
        Summary::from_rows(&self.rows) == self.summary
    }

    /// A copy with every timing field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .cloned()
            .map(|mut r| {
                r.wall_time_us = 0;
                r.calls.llm_time_us = 0;
                r
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(&Line::Row(Box::new(row.clone()))).expect("row serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&Line::Summary(self.summary.clone())).expect("summary serializes"));
        out.push('\n');
        out
    }

    /// Reads rows back; the summary is recomputed rather than trusted.
    pub fn from_jsonl(text: &str) -> Result<Self, HarnessError> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(line)
                .map_err(|e| HarnessError::Report(format!("line {}: {e}", i + 1)))?;
            if let Line::Row(row) = parsed {
                rows.push(*row);
            }
        }
        Ok(Self::from_rows(rows))
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let mut file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

/// Evaluation-time union with a plain-prompting run: per question, each
/// match flag is the OR of the two reports' flags. Answers and costs are
/// taken from `method`.
pub fn merge_with_io(method: &RunReport, io: &RunReport) -> Result<RunReport, HarnessError> {
    let io_rows: BTreeMap<&str, &QuestionRow> = io.rows.iter().map(|r| (r.id.as_str(), r)).collect();
    let method_ids: Vec<&str> = method.rows.iter().map(|r| r.id.as_str()).collect();
    if method_ids.len() != io_rows.len() || method_ids.iter().any(|id| !io_rows.contains_key(id)) {
        return Err(HarnessError::Report("merged reports must cover the same question ids".into()));
    }
    let rows = method
        .rows
        .iter()
        .map(|m| {
            let o = io_rows[m.id.as_str()];
            let mut row = m.clone();
            row.partial |= o.partial;
            row.complete |= o.complete;
            row.boolean = match (m.boolean, o.boolean) {
                (None, None) => None,
                (a, b) => Some(a.unwrap_or(false) || b.unwrap_or(false)),
            };
            row
        })
        .collect();
    Ok(RunReport::from_rows(rows))
}
