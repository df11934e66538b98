//! Prompt templates with positional `{}` placeholders, loaded from data files
//! so a translated set can replace the shipped English one.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ChatRequest, LlmError, Message, PromptKind, Role};

const EN_CLUE_EXTRACTION: &str = include_str!("../../data/templates/en/clue_extraction.txt");
const EN_RELATION_MAPPING: &str = include_str!("../../data/templates/en/relation_mapping.txt");
const EN_ENTITY_MAPPING: &str = include_str!("../../data/templates/en/entity_mapping.txt");
const EN_ANSWERING: &str = include_str!("../../data/templates/en/answering.txt");

/// Named slot values for one prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Slots(BTreeMap<String, String>);

impl Slots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    /// Literal text around the placeholders; one more piece than placeholders.
    pieces: Vec<String>,
}

impl Template {
    fn parse(kind: PromptKind, text: &str) -> Result<Self, LlmError> {
        let body = text.trim_end_matches(['\n', '\r']);
        let pieces: Vec<String> = body.split("{}").map(str::to_string).collect();
        let expected = kind.slot_names().len();
        if pieces.len() - 1 != expected {
            return Err(LlmError::Template(format!(
                "{kind} template has {} placeholder(s), expected {expected}",
                pieces.len() - 1
            )));
        }
        Ok(Self { pieces })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    language: String,
    templates: [Template; 4],
}

impl TemplateSet {
    pub fn english() -> Self {
        Self::from_texts("en", [EN_CLUE_EXTRACTION, EN_RELATION_MAPPING, EN_ENTITY_MAPPING, EN_ANSWERING])
            .expect("shipped templates are well-formed")
    }

    /// Texts in [`PromptKind::ALL`] order.
    pub fn from_texts(language: &str, texts: [&str; 4]) -> Result<Self, LlmError> {
        let [a, b, c, d] = texts;
        Ok(Self {
            language: language.to_string(),
            templates: [
                Template::parse(PromptKind::ClueExtraction, a)?,
                Template::parse(PromptKind::RelationMapping, b)?,
                Template::parse(PromptKind::EntityMapping, c)?,
                Template::parse(PromptKind::Answering, d)?,
            ],
        })
    }

    /// Loads `<kind>.txt` for every prompt kind from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, LlmError> {
        let read = |kind: PromptKind| {
            let path = dir.join(format!("{}.txt", kind.as_str()));
            fs::read_to_string(&path).map_err(|e| LlmError::Template(format!("{}: {e}", path.display())))
        };
        let texts = [
            read(PromptKind::ClueExtraction)?,
            read(PromptKind::RelationMapping)?,
            read(PromptKind::EntityMapping)?,
            read(PromptKind::Answering)?,
        ];
        let language = dir.file_name().and_then(|n| n.to_str()).unwrap_or("custom");
        Self::from_texts(language, [&texts[0], &texts[1], &texts[2], &texts[3]])
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    /// Instantiates the template for `kind`. Every slot named by
    /// [`PromptKind::slot_names`] must be present.
    pub fn render(&self, kind: PromptKind, slots: &Slots) -> Result<ChatRequest, LlmError> {
        let names = kind.slot_names();
        let missing: Vec<String> =
            names.iter().filter(|n| slots.get(n).is_none()).map(|n| n.to_string()).collect();
        if !missing.is_empty() {
            return Err(LlmError::MissingSlots { kind, missing });
        }
        let values: Vec<&str> = names.iter().map(|n| slots.get(n).unwrap_or_default()).collect();

        let template = &self.templates[kind.slot()];
        let mut content = template.pieces[0].clone();
        for (value, piece) in values.iter().zip(&template.pieces[1..]) {
            content.push_str(value);
            content.push_str(piece);
        }
        Ok(ChatRequest {
            messages: vec![Message { role: Role::User, content }],
            temperature: 0.0,
            max_tokens: 512,
            tag: kind,
            key: values.join(" | "),
        })
    }
}

/// Python-style string literal: single quotes unless the text contains one
/// and no double quote.
pub fn py_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

/// `['a', 'b']`
pub fn py_list<S: AsRef<str>>(items: &[S]) -> String {
    let inner: Vec<String> = items.iter().map(|s| py_str(s.as_ref())).collect();
    format!("[{}]", inner.join(", "))
}

/// `('a', 'b')`
pub fn py_tuple<S: AsRef<str>>(items: &[S]) -> String {
    let inner: Vec<String> = items.iter().map(|s| py_str(s.as_ref())).collect();
    format!("({})", inner.join(", "))
}
