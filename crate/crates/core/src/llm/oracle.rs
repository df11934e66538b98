//! A deterministic stand-in for a language model.
//!
//! Mapping prompts are answered by token overlap: a clue scores
//! `round(10 * shared / clue_tokens)` against a label, where tokens are
//! lowercased, punctuation-stripped and split on whitespace, dots and
//! underscores. The oracle reads the rendered prompt text, so it only
//! understands the English template set.

use std::collections::{BTreeSet, HashMap};

use super::parse::{parse_py_list, PyItem};
use super::{py_list, py_str, py_tuple, ChatBackend, ChatRequest, ChatResponse, LlmError, PromptKind};
use crate::kg_store::Normalization;

/// Overlap tokens of `text`.
pub fn overlap_tokens(text: &str) -> BTreeSet<String> {
    let spaced: String = text
        .to_lowercase()
        .chars()
        .filter_map(|c| match c {
            '.' | '_' => Some(' '),
            c if c.is_alphanumeric() || c.is_whitespace() => Some(c),
            _ => None,
        })
        .collect();
    spaced.split_whitespace().map(str::to_string).collect()
}

/// `round(10 * |clue ∩ label| / |clue|)`, 0 for a clue without tokens.
pub fn overlap_score(clue: &str, label: &str) -> u8 {
    let clue_tokens = overlap_tokens(clue);
    if clue_tokens.is_empty() {
        return 0;
    }
    let shared = clue_tokens.intersection(&overlap_tokens(label)).count();
    (10.0 * shared as f64 / clue_tokens.len() as f64).round() as u8
}

/// Best clue for a relation label: highest score, earliest clue on ties.
pub fn best_relation_clue<'c>(clues: &'c [String], relation: &str) -> Option<(&'c str, u8)> {
    let mut best: Option<(&str, u8)> = None;
    for clue in clues {
        let s = overlap_score(clue, relation);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((clue, s));
        }
    }
    best
}

/// Best clue for a `(relation, entity)` candidate. A clue scores the larger
/// of its overlap with the entity label and with the relation label; ties
/// prefer the clue matched through the entity label, then the earlier clue.
pub fn best_entity_clue<'c>(clues: &'c [String], relation: &str, entity: &str) -> Option<(&'c str, u8)> {
    let mut best: Option<(&str, u8, u8)> = None;
    for clue in clues {
        let by_entity = overlap_score(clue, entity);
        let score = by_entity.max(overlap_score(clue, relation));
        if best.is_none_or(|(_, s, e)| (score, by_entity) > (s, e)) {
            best = Some((clue, score, by_entity));
        }
    }
    best.map(|(c, s, _)| (c, s))
}

#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    clue_table: HashMap<String, Vec<String>>,
    knowledge: HashMap<String, String>,
}

const BOOLEAN_OPENERS: &[&str] =
    &["is", "are", "was", "were", "does", "do", "did", "can", "has", "have", "will", "could", "should"];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "by", "with", "and", "or", "is", "are", "was", "were",
    "what", "which", "who", "whom", "whose", "where", "when", "how", "does", "do", "did", "that", "this", "it",
    "be", "name", "as", "from",
];

fn question_key(q: &str) -> String {
    Normalization::default().apply(q)
}

impl OracleBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the clue list returned when `question` is sent for extraction.
    pub fn with_clues<S: AsRef<str>>(mut self, question: &str, clues: &[S]) -> Self {
        self.clue_table
            .insert(question_key(question), clues.iter().map(|c| c.as_ref().to_string()).collect());
        self
    }

    /// Registers what the oracle "knows" when asked `question` without triples.
    pub fn with_knowledge(mut self, question: &str, answer: &str) -> Self {
        self.knowledge.insert(question_key(question), answer.to_string());
        self
    }

    fn extract(&self, question: &str) -> String {
        let clues = self.clue_table.get(&question_key(question)).cloned().unwrap_or_else(|| {
            question
                .split(|c: char| !c.is_alphanumeric() && c != '\'' && c != '-')
                .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.to_lowercase().as_str()))
                .map(str::to_string)
                .collect()
        });
        format!("entities: {}", py_list(&clues))
    }

    fn assess_relations(clues: &[String], relations: &[String]) -> String {
        relations
            .iter()
            .map(|rel| match best_relation_clue(clues, rel) {
                Some((clue, s)) if s > 0 => {
                    format!("- {} is related to the {clue}, so it's a match, ({s}) score.", py_str(rel))
                }
                _ => format!(
                    "- {} is not related to any information in the sentence, so it's not a match, (0) score.",
                    py_str(rel)
                ),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn assess_entities(clues: &[String], candidates: &[(String, String)]) -> String {
        candidates
            .iter()
            .map(|(rel, ent)| {
                let pair = py_tuple(&[rel, ent]);
                match best_entity_clue(clues, rel, ent) {
                    Some((clue, s)) if s > 0 => {
                        format!("- {pair} is related to {}, so it's a match, ({s}) score.", py_str(clue))
                    }
                    _ => format!("- {pair} is not related to any information in the sentence, (0) score."),
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn answer(&self, question: &str, triples: &[Vec<String>]) -> String {
        let first_word = question.split_whitespace().next().unwrap_or("").to_lowercase();
        let boolean = BOOLEAN_OPENERS.contains(&first_word.as_str());
        if triples.is_empty() {
            return match self.knowledge.get(&question_key(question)) {
                Some(known) => format!("Let's think step by step. The answer is {known}."),
                None => "Let's think step by step. I am not sure of the answer.".to_string(),
            };
        }
        if boolean {
            return "Yes, the provided triplets support this.".to_string();
        }
        let heads: BTreeSet<&str> = triples.iter().filter_map(|t| t.first().map(String::as_str)).collect();
        let mut leaves: Vec<&str> = Vec::new();
        for t in triples {
            if let Some(tail) = t.get(2) {
                if !heads.contains(tail.as_str()) && !leaves.contains(&tail.as_str()) {
                    leaves.push(tail);
                }
            }
        }
        format!("Based on the triplets, the answer is {}.", leaves.join(", "))
    }
}

/// Value of the last line starting with `marker`.
fn last_field<'a>(content: &'a str, marker: &str) -> Option<&'a str> {
    content.lines().rev().find_map(|l| l.strip_prefix(marker)).map(str::trim)
}

fn string_list(field: Option<&str>) -> Vec<String> {
    field
        .and_then(|f| parse_py_list(f.trim_start()))
        .map(|(items, _)| {
            items
                .into_iter()
                .filter_map(|i| match i {
                    PyItem::Str(s) => Some(s),
                    PyItem::Tuple(_) => None,
                })
                .collect()
        })
        .unwrap_or_default()
}

fn tuple_list(field: Option<&str>) -> Vec<Vec<String>> {
    field
        .and_then(|f| parse_py_list(f.trim_start()))
        .map(|(items, _)| {
            items
                .into_iter()
                .filter_map(|i| match i {
                    PyItem::Tuple(parts) => Some(parts),
                    PyItem::Str(_) => None,
                })
                .collect()
        })
        .unwrap_or_default()
}

impl ChatBackend for OracleBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let content = req.user_content();
        let text = match req.tag {
            PromptKind::ClueExtraction => {
                let q = last_field(content, "sentence:")
                    .ok_or_else(|| LlmError::InvalidRequest("no sentence in extraction prompt".into()))?;
                self.extract(q)
            }
            PromptKind::RelationMapping => Self::assess_relations(
                &string_list(last_field(content, "target information:")),
                &string_list(last_field(content, "relations:")),
            ),
            PromptKind::EntityMapping => {
                let candidates: Vec<(String, String)> = tuple_list(last_field(content, "candidate entity:"))
                    .into_iter()
                    .filter_map(|t| match <[String; 2]>::try_from(t) {
                        Ok([r, e]) => Some((r, e)),
                        Err(_) => None,
                    })
                    .collect();
                Self::assess_entities(&string_list(last_field(content, "information in the sentence:")), &candidates)
            }
            PromptKind::Answering => {
                let q = last_field(content, "question:").unwrap_or("");
                self.answer(q, &tuple_list(last_field(content, "triplets:")))
            }
        };
        Ok(ChatResponse {
            prompt_tokens: content.split_whitespace().count() as u64,
            completion_tokens: text.split_whitespace().count() as u64,
            text,
        })
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clue_state::Clue;
    use crate::llm::{parse_verdicts, Element, Slots, TemplateSet};

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenization() {
        assert_eq!(
            overlap_tokens("language.human_language.Main_Country"),
            ["country", "human", "language", "main"].iter().map(|s| s.to_string()).collect()
        );
        assert_eq!(overlap_tokens("21,540,000 it's"), ["21540000", "its"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn score_definition() {
        assert_eq!(overlap_score("capital", "capital"), 10);
        assert_eq!(overlap_score("main spoken language", "language.human_language.main_country"), 7);
        assert_eq!(overlap_score("population", "capital"), 0);
        assert_eq!(overlap_score("", "capital"), 0);
    }

    #[test]
    fn relation_mapping_over_capital_and_currency() {
        let templates = TemplateSet::english();
        let slots = Slots::new()
            .with("sentence", "What is the population of the capital of China?")
            .with("target_information", py_list(&["capital", "population"]))
            .with("relations", py_list(&["capital", "currency"]));
        let req = templates.render(PromptKind::RelationMapping, &slots).unwrap();
        let resp = OracleBackend::new().complete(&req).unwrap();
        let cands: Vec<Clue> =
            ["capital", "population"].iter().enumerate().map(|(i, t)| Clue { text: t.to_string(), index: i }).collect();
        let universe = vec![Element::Relation("capital".into()), Element::Relation("currency".into())];
        let parsed = parse_verdicts(&resp.text, &cands, &universe);
        let got: Vec<(String, u8)> = parsed.verdicts.iter().map(|v| (v.element_label.clone(), v.score)).collect();
        assert_eq!(got, vec![("capital".to_string(), 10), ("currency".to_string(), 0)]);
        assert_eq!(parsed.verdicts[0].clue.text, "capital");
    }

    #[test]
    fn entity_clue_prefers_entity_label_on_ties() {
        let clues = strings(&["capital", "Beijing"]);
        assert_eq!(best_entity_clue(&clues, "capital", "Beijing"), Some(("Beijing", 10)));
        let clues = strings(&["capital", "population"]);
        assert_eq!(best_entity_clue(&clues, "capital", "Beijing"), Some(("capital", 10)));
    }

    #[test]
    fn answers_from_leaf_tails() {
        let oracle = OracleBackend::new();
        let triples = vec![strings(&["China", "capital", "Beijing"]), strings(&["Beijing", "population", "21,540,000"])];
        assert_eq!(oracle.answer("What is the population?", &triples), "Based on the triplets, the answer is 21,540,000.");
        assert!(oracle.answer("Is Beijing big?", &triples).starts_with("Yes"));
    }

    #[test]
    fn extraction_uses_registered_clues_then_content_words() {
        let oracle = OracleBackend::new().with_clues("Which place is the madam satan located?", &["place", "madam satan"]);
        assert_eq!(oracle.extract("which place is the  madam satan located?"), "entities: ['place', 'madam satan']");
        assert_eq!(oracle.extract("What is the capital of France?"), "entities: ['capital', 'France']");
    }

    #[test]
    fn cot_uses_knowledge() {
        let oracle = OracleBackend::new().with_knowledge("Who wrote Hamlet?", "Shakespeare");
        assert!(oracle.answer("Who wrote Hamlet?", &[]).contains("Shakespeare"));
        assert!(oracle.answer("Who wrote Ulysses?", &[]).contains("not sure"));
    }
}
