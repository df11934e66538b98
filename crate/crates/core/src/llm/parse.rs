//! Parsing of clue lists and scored mapping assessments out of free-form
//! model output.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::oracle::overlap_tokens;
use super::LlmError;
use crate::clue_state::Clue;

/// A graph element offered to the model for scoring.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Element {
    Relation(String),
    /// Rendered as a `(relation, entity)` pair.
    Entity { relation: String, entity: String },
}

impl Element {
    pub fn label(&self) -> &str {
        match self {
            Element::Relation(r) => r,
            Element::Entity { entity, .. } => entity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingVerdict {
    pub clue: Clue,
    /// Position of the scored element in the universe passed to [`parse_verdicts`].
    pub element: usize,
    pub element_label: String,
    pub score: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedVerdicts {
    pub verdicts: Vec<MappingVerdict>,
    /// Scores outside 0..=10 that were clamped.
    pub clamped: usize,
}

impl ParsedVerdicts {
    /// Verdicts with `score >= threshold`.
    pub fn accepted(&self, threshold: u8) -> impl Iterator<Item = &MappingVerdict> {
        self.verdicts.iter().filter(move |v| v.score >= threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum PyItem {
    Str(String),
    Tuple(Vec<String>),
}

/// Parses a Python-like list literal starting at `s[0] == '['`. Returns the
/// items and the byte length consumed.
pub(crate) fn parse_py_list(s: &str) -> Option<(Vec<PyItem>, usize)> {
    let mut p = Cursor { s, pos: 0 };
    p.expect('[')?;
    let mut items = Vec::new();
    loop {
        p.skip_ws();
        match p.peek()? {
            ']' => {
                p.pos += 1;
                return Some((items, p.pos));
            }
            '(' => items.push(PyItem::Tuple(p.tuple()?)),
            '\'' | '"' => items.push(PyItem::Str(p.string()?)),
            _ => items.push(PyItem::Str(p.bare(&[',', ']'])?)),
        }
        p.skip_ws();
        match p.peek()? {
            ',' => p.pos += 1,
            ']' => {}
            _ => return None,
        }
    }
}

/// Parses a tuple literal starting at `s[0] == '('`.
pub(crate) fn parse_py_tuple(s: &str) -> Option<(Vec<String>, usize)> {
    let mut p = Cursor { s, pos: 0 };
    let parts = p.tuple()?;
    Some((parts, p.pos))
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.s[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Option<()> {
        (self.peek()? == c).then(|| self.pos += c.len_utf8())
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn tuple(&mut self) -> Option<Vec<String>> {
        self.expect('(')?;
        let mut parts = Vec::new();
        loop {
            self.skip_ws();
            match self.peek()? {
                ')' => {
                    self.pos += 1;
                    return Some(parts);
                }
                '\'' | '"' => parts.push(self.string()?),
                _ => parts.push(self.bare(&[',', ')'])?),
            }
            self.skip_ws();
            match self.peek()? {
                ',' => self.pos += 1,
                ')' => {}
                _ => return None,
            }
        }
    }

    fn string(&mut self) -> Option<String> {
        let quote = self.peek()?;
        self.pos += 1;
        let mut out = String::new();
        let mut chars = self.s[self.pos..].char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '\\' => {
                    let (_, e) = chars.next()?;
                    out.push(match e {
                        'n' => '\n',
                        't' => '\t',
                        other => other,
                    });
                }
                c if c == quote => {
                    self.pos += i + 1;
                    return Some(out);
                }
                c => out.push(c),
            }
        }
        None
    }

    fn bare(&mut self, stops: &[char]) -> Option<String> {
        let rest = &self.s[self.pos..];
        let end = rest.find(|c| stops.contains(&c) || c == '\n')?;
        if rest[end..].starts_with('\n') {
            return None;
        }
        self.pos += end;
        Some(rest[..end].trim().trim_matches(['\'', '"', '`']).to_string())
    }
}

static ENTITIES_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)entities\s*[:=]").unwrap());

/// Extracts the clue list following `entities:`. Surrounding chatter, code
/// fences and either quote style are tolerated; the last parseable list wins.
pub fn parse_clues(text: &str) -> Result<Vec<String>, LlmError> {
    let clean = |items: Vec<PyItem>| -> Vec<String> {
        items
            .into_iter()
            .flat_map(|item| match item {
                PyItem::Str(s) => vec![s],
                PyItem::Tuple(parts) => parts,
            })
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    };

    let markers: Vec<usize> = ENTITIES_MARKER.find_iter(text).map(|m| m.end()).collect();
    for &start in markers.iter().rev() {
        let after = &text[start..];
        let Some(open) = after.find('[') else { continue };
        // only fences, quotes and whitespace may sit between the marker and the list
        if !after[..open].chars().all(|c| c.is_whitespace() || c == '`' || c == '*') {
            continue;
        }
        if let Some((items, _)) = parse_py_list(&after[open..]) {
            return Ok(clean(items));
        }
    }
    for (open, _) in text.match_indices('[').collect::<Vec<_>>().into_iter().rev() {
        if let Some((items, _)) = parse_py_list(&text[open..]) {
            return Ok(clean(items));
        }
    }
    Err(LlmError::Unparseable(format!("no clue list in {:?}", truncate(text, 80))))
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

static SCORE_TAGGED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\(\s*(-?\d+)\s*\)\s*(?:score|points?)").unwrap());
static SCORE_PAREN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(\s*(-?\d+)\s*\)").unwrap());
static SCORE_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)score\s*(?:of|[:=])?\s*(-?\d+)|(-?\d+)\s*/\s*10\b").unwrap());

fn line_score(line: &str) -> Option<(i64, std::ops::Range<usize>)> {
    let from = |m: regex::Captures<'_>| {
        let g = m.get(1).or_else(|| m.get(2))?;
        Some((g.as_str().parse::<i64>().ok()?, m.get(0)?.range()))
    };
    SCORE_TAGGED
        .captures_iter(line)
        .last()
        .and_then(from)
        .or_else(|| SCORE_PAREN.captures_iter(line).last().and_then(from))
        .or_else(|| SCORE_WORD.captures_iter(line).last().and_then(from))
}

/// Case-insensitive whole-phrase search; returns the byte offset of the first
/// hit within `haystack.to_lowercase()`.
fn find_phrase(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let hay = haystack.to_lowercase();
    let pat = needle.to_lowercase();
    let mut from = 0;
    while let Some(off) = hay[from..].find(&pat) {
        let start = from + off;
        let end = start + pat.len();
        let before = hay[..start].chars().next_back();
        let after = hay[end..].chars().next();
        if !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric) {
            return Some(start);
        }
        from = start + hay[start..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Finds which universe element a line talks about, and the line text that
/// remains once that mention is removed.
fn identify_element(line: &str, universe: &[Element]) -> Option<(usize, String)> {
    let lookup_pair = |rel: &str, ent: &str| {
        universe.iter().position(|e| matches!(e, Element::Entity { relation, entity } if relation == rel && entity == ent))
    };
    let lookup_single = |s: &str| {
        universe
            .iter()
            .position(|e| matches!(e, Element::Relation(r) if r == s))
            .or_else(|| universe.iter().position(|e| matches!(e, Element::Entity { entity, .. } if entity == s)))
    };

    // leading tuple: ('rel', 'entity')
    if let Some(open) = line.find('(') {
        let after = line[open + 1..].trim_start();
        if after.starts_with('\'') || after.starts_with('"') {
            if let Some((parts, used)) = parse_py_tuple(&line[open..]) {
                let hit = match parts.as_slice() {
                    [rel, ent] => lookup_pair(rel, ent),
                    [single] => lookup_single(single),
                    _ => None,
                };
                if let Some(idx) = hit {
                    let remainder = format!("{} {}", &line[..open], &line[open + used..]);
                    return Some((idx, remainder));
                }
            }
        }
    }

    // first quoted string
    for quote in ['\'', '"'] {
        if let Some(open) = line.find(quote) {
            if let Some(len) = line[open + 1..].find(quote) {
                let inner = &line[open + 1..open + 1 + len];
                if let Some(idx) = lookup_single(inner) {
                    let remainder = format!("{} {}", &line[..open], &line[open + len + 2..]);
                    return Some((idx, remainder));
                }
            }
        }
    }

    // an element named explicitly but unknown to the graph is dropped
    let lead = line.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '-' | '*' | '•'));
    if lead.starts_with(['\'', '"', '(']) {
        return None;
    }

    // longest label mentioned anywhere
    let mut best: Option<(usize, usize, usize)> = None; // (len, idx, start)
    for (idx, element) in universe.iter().enumerate() {
        let label = element.label();
        if let Some(start) = find_phrase(line, label) {
            if best.is_none_or(|(len, _, _)| label.len() > len) {
                best = Some((label.len(), idx, start));
            }
        }
    }
    // offsets from find_phrase index the lowercased line
    let lowered = line.to_lowercase();
    best.map(|(_, idx, start)| {
        let end = start + universe[idx].label().to_lowercase().len();
        (idx, format!("{} {}", &lowered[..start], &lowered[end..]))
    })
}

fn attribute_clue<'c>(remainder: &str, candidates: &'c [Clue]) -> &'c Clue {
    let mut best: Option<&Clue> = None;
    for clue in candidates {
        if find_phrase(remainder, &clue.text).is_some()
            && best.is_none_or(|b| clue.text.len() > b.text.len())
        {
            best = Some(clue);
        }
    }
    if let Some(clue) = best {
        return clue;
    }
    let words = overlap_tokens(remainder);
    let mut best = &candidates[0];
    let mut best_shared = 0;
    for clue in candidates {
        let shared = overlap_tokens(&clue.text).intersection(&words).count();
        if shared > best_shared {
            best = clue;
            best_shared = shared;
        }
    }
    best
}

/// Turns an assessment into verdicts over `universe`.
///
/// Each line contributes at most one verdict: the element it names and the
/// parenthesized score it ends with. Lines naming no known element are
/// dropped, as are repeated mentions of an already-scored element. The
/// verdict's clue is the longest candidate whose text appears in the line
/// outside the element mention, else the candidate with the largest token
/// overlap, else the first candidate.
pub fn parse_verdicts(text: &str, candidates: &[Clue], universe: &[Element]) -> ParsedVerdicts {
    let mut out = ParsedVerdicts::default();
    if candidates.is_empty() || universe.is_empty() {
        return out;
    }
    let mut seen = BTreeSet::new();
    for raw in text.lines() {
        let line = raw.trim().trim_start_matches(['-', '*', '•']).trim();
        if line.is_empty() {
            continue;
        }
        let Some((score, score_span)) = line_score(line) else { continue };
        let mut without_score = String::with_capacity(line.len());
        without_score.push_str(&line[..score_span.start]);
        without_score.push(' ');
        without_score.push_str(&line[score_span.end..]);

        let Some((element, remainder)) = identify_element(&without_score, universe) else { continue };
        if !seen.insert(element) {
            continue;
        }
        let clamped = score.clamp(0, 10);
        if clamped != score {
            out.clamped += 1;
        }
        out.verdicts.push(MappingVerdict {
            clue: attribute_clue(&remainder, candidates).clone(),
            element,
            element_label: universe[element].label().to_string(),
            score: clamped as u8,
        });
    }
    out
}
