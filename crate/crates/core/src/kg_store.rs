//! Immutable, indexed in-memory triple store.
//!
//! Entity and relation labels are interned into dense ids assigned in label
//! order, so sorting by id is sorting by label. Every query that returns a set
//! returns it in that order, which keeps rendered prompts and branch ids
//! reproducible.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clue_state::Clue;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: malformed N-Triples statement: {reason}")]
    NTriples { line: usize, reason: String },
    #[error("line {line}: empty label")]
    EmptyLabel { line: usize },
    #[error("graph source contains no triples")]
    Empty,
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

/// One directed labeled edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

/// How labels are folded before starting-point matching. Trimming always applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub lowercase: bool,
    pub collapse_whitespace: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { lowercase: true, collapse_whitespace: true }
    }
}

impl Normalization {
    pub const EXACT: Normalization = Normalization { lowercase: false, collapse_whitespace: false };

    pub fn apply(&self, text: &str) -> String {
        let trimmed = text.trim();
        let collapsed = if self.collapse_whitespace {
            trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
        } else {
            trimmed.to_string()
        };
        if self.lowercase {
            collapsed.to_lowercase()
        } else {
            collapsed
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Also index every edge reversed, under a synthesized `inv:<label>` relation.
    pub inverse_edges: bool,
    pub normalization: Normalization,
}

/// Source line syntax accepted by [`Graph::parse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleFormat {
    /// `head<TAB>relation<TAB>tail`
    Tsv,
    /// `<head> <relation> <tail> .`
    NTriples,
}

impl TripleFormat {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nt") => TripleFormat::NTriples,
            _ => TripleFormat::Tsv,
        }
    }
}

/// Collects labeled triples and interns them into a [`Graph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    triples: Vec<(String, String, String)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> &mut Self {
        self.triples
            .push((head.trim().to_string(), relation.trim().to_string(), tail.trim().to_string()));
        self
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn build(self, options: &LoadOptions) -> Result<Graph, GraphError> {
        if self.triples.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut labeled = self.triples;
        if options.inverse_edges {
            let inverse: Vec<_> = labeled
                .iter()
                .map(|(h, r, t)| (t.clone(), format!("inv:{r}"), h.clone()))
                .collect();
            labeled.extend(inverse);
        }

        let entity_labels: Vec<String> = labeled
            .iter()
            .flat_map(|(h, _, t)| [h.clone(), t.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let relation_labels: Vec<String> = labeled
            .iter()
            .map(|(_, r, _)| r.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let entity_ids: HashMap<&str, EntityId> = entity_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), EntityId(i as u32)))
            .collect();
        let relation_ids: HashMap<&str, RelationId> = relation_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), RelationId(i as u32)))
            .collect();

        let mut triples: Vec<Triple> = labeled
            .iter()
            .map(|(h, r, t)| {
                Triple::new(entity_ids[h.as_str()], relation_ids[r.as_str()], entity_ids[t.as_str()])
            })
            .collect();
        triples.sort_unstable();
        triples.dedup();

        Ok(Graph::from_parts(entity_labels, relation_labels, triples, options.normalization))
    }
}

/// Per-head adjacency: relations in label order, each with its tails in label order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Adjacency {
    relations: Vec<RelationId>,
    tails: Vec<Vec<EntityId>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    entity_labels: Vec<String>,
    relation_labels: Vec<String>,
    triples: Vec<Triple>,
    out: Vec<Adjacency>,
    label_index: BTreeMap<String, Vec<EntityId>>,
    relation_by_label: HashMap<String, RelationId>,
    entity_by_label: HashMap<String, EntityId>,
    normalization: Normalization,
}

impl Graph {
    fn from_parts(
        entity_labels: Vec<String>,
        relation_labels: Vec<String>,
        triples: Vec<Triple>,
        normalization: Normalization,
    ) -> Self {
        let out = build_adjacency(entity_labels.len(), &triples);
        let label_index = build_label_index(&entity_labels, normalization);
        let relation_by_label = relation_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), RelationId(i as u32)))
            .collect();
        let entity_by_label = entity_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), EntityId(i as u32)))
            .collect();
        Self {
            entity_labels,
            relation_labels,
            triples,
            out,
            label_index,
            relation_by_label,
            entity_by_label,
            normalization,
        }
    }

    pub fn load(path: &Path, options: &LoadOptions) -> Result<Self, GraphError> {
        let text = fs::read_to_string(path).map_err(|e| GraphError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, TripleFormat::for_path(path), options)
    }

    pub fn parse(text: &str, format: TripleFormat, options: &LoadOptions) -> Result<Self, GraphError> {
        let mut builder = GraphBuilder::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let (h, r, t) = match format {
                TripleFormat::Tsv => parse_tsv_line(trimmed, line)?,
                TripleFormat::NTriples => parse_ntriples_line(trimmed, line)?,
            };
            builder.add(&h, &r, &t);
        }
        builder.build(options)
    }

    pub fn entity_count(&self) -> usize {
        self.entity_labels.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn entity_label(&self, id: EntityId) -> Result<&str, GraphError> {
        self.entity_labels
            .get(id.0 as usize)
            .map(String::as_str)
            .ok_or(GraphError::UnknownEntity(id.0))
    }

    pub fn relation_label(&self, id: RelationId) -> Result<&str, GraphError> {
        self.relation_labels
            .get(id.0 as usize)
            .map(String::as_str)
            .ok_or(GraphError::UnknownRelation(id.0))
    }

    /// Exact (un-normalized) label lookup.
    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entity_by_label.get(label).copied()
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relation_by_label.get(label).copied()
    }

    /// Renders a triple with its labels.
    pub fn labels_of(&self, t: &Triple) -> Result<(&str, &str, &str), GraphError> {
        Ok((self.entity_label(t.head)?, self.relation_label(t.relation)?, self.entity_label(t.tail)?))
    }

    fn adjacency(&self, e: EntityId) -> Result<&Adjacency, GraphError> {
        self.out.get(e.0 as usize).ok_or(GraphError::UnknownEntity(e.0))
    }

    /// Relations with at least one outgoing edge from `e`, in label order.
    ///
    /// An entity with no outgoing edges yields an empty slice; an id the
    /// graph never issued is an error.
    pub fn get_relations(&self, e: EntityId) -> Result<&[RelationId], GraphError> {
        Ok(&self.adjacency(e)?.relations)
    }

    /// Tails of `(e, r, ·)` in label order.
    pub fn get_entities(&self, e: EntityId, r: RelationId) -> Result<&[EntityId], GraphError> {
        if r.0 as usize >= self.relation_labels.len() {
            return Err(GraphError::UnknownRelation(r.0));
        }
        let adj = self.adjacency(e)?;
        Ok(match adj.relations.binary_search(&r) {
            Ok(pos) => &adj.tails[pos],
            Err(_) => &[],
        })
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.get_entities(t.head, t.relation)
            .map(|tails| tails.binary_search(&t.tail).is_ok())
            .unwrap_or(false)
    }

    /// Entities whose normalized label equals `text` normalized the same way.
    pub fn lookup_label(&self, text: &str) -> &[EntityId] {
        self.label_index
            .get(&self.normalization.apply(text))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Anchors exploration: every (clue, entity) pair whose labels match
    /// lexically after normalization, ordered by clue then entity label.
    pub fn find_starting_points(&self, clues: &[Clue]) -> Vec<(Clue, EntityId)> {
        clues
            .iter()
            .flat_map(|clue| self.lookup_label(&clue.text).iter().map(move |&e| (clue.clone(), e)))
            .collect()
    }

    /// Rebuilds every index from the triple list and compares it with the stored one.
    pub fn verify_indexes(&self) -> bool {
        let out = build_adjacency(self.entity_labels.len(), &self.triples);
        let labels = build_label_index(&self.entity_labels, self.normalization);
        let sorted = self.triples.windows(2).all(|w| w[0] < w[1]);
        sorted && out == self.out && labels == self.label_index
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} triples, {} entities, {} relations",
            self.triple_count(),
            self.entity_count(),
            self.relation_count()
        )
    }
}

fn build_adjacency(entity_count: usize, triples: &[Triple]) -> Vec<Adjacency> {
    let mut out = vec![Adjacency::default(); entity_count];
    // triples are sorted by (head, relation, tail), so each head's edges are
    // contiguous and relation groups arrive in order
    for t in triples {
        let adj = &mut out[t.head.0 as usize];
        if adj.relations.last() != Some(&t.relation) {
            adj.relations.push(t.relation);
            adj.tails.push(Vec::new());
        }
        adj.tails.last_mut().expect("group pushed above").push(t.tail);
    }
    out
}

fn build_label_index(labels: &[String], normalization: Normalization) -> BTreeMap<String, Vec<EntityId>> {
    let mut index: BTreeMap<String, Vec<EntityId>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        index.entry(normalization.apply(label)).or_default().push(EntityId(i as u32));
    }
    index
}

fn parse_tsv_line(line: &str, number: usize) -> Result<(String, String, String), GraphError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(GraphError::FieldCount { line: number, found: fields.len() });
    }
    if fields.iter().any(|f| f.trim().is_empty()) {
        return Err(GraphError::EmptyLabel { line: number });
    }
    Ok((fields[0].to_string(), fields[1].to_string(), fields[2].to_string()))
}

fn parse_ntriples_line(line: &str, number: usize) -> Result<(String, String, String), GraphError> {
    let err = |reason: &str| GraphError::NTriples { line: number, reason: reason.to_string() };
    let mut rest = line.trim();
    rest = rest.strip_suffix('.').ok_or_else(|| err("missing terminating '.'"))?.trim_end();

    let mut terms = Vec::with_capacity(3);
    while !rest.is_empty() {
        let (term, remaining) = if let Some(body) = rest.strip_prefix('<') {
            let end = body.find('>').ok_or_else(|| err("unterminated '<'"))?;
            (body[..end].to_string(), &body[end + 1..])
        } else if let Some(body) = rest.strip_prefix('"') {
            let mut value = String::new();
            let mut chars = body.char_indices();
            let mut close = None;
            while let Some((i, c)) = chars.next() {
                match c {
                    '\\' => {
                        if let Some((_, escaped)) = chars.next() {
                            value.push(match escaped {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                        }
                    }
                    '"' => {
                        close = Some(i);
                        break;
                    }
                    other => value.push(other),
                }
            }
            let close = close.ok_or_else(|| err("unterminated literal"))?;
            let mut after = &body[close + 1..];
            // drop a language tag or datatype suffix
            if let Some(stripped) = after.strip_prefix('@').or_else(|| after.strip_prefix("^^")) {
                after = stripped.find(char::is_whitespace).map_or("", |p| &stripped[p..]);
            }
            (value, after)
        } else {
            return Err(err("expected '<' or '\"'"));
        };
        terms.push(term);
        rest = remaining.trim_start();
    }
    if terms.len() != 3 {
        return Err(err(&format!("expected 3 terms, found {}", terms.len())));
    }
    if terms.iter().any(|t| t.trim().is_empty()) {
        return Err(GraphError::EmptyLabel { line: number });
    }
    let mut it = terms.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap(), it.next().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Graph {
        Graph::parse(
            "China\tcapital\tBeijing\nBeijing\tpopulation\t21,540,000\n",
            TripleFormat::Tsv,
            &LoadOptions::default(),
        )
        .unwrap()
    }

    fn clue(text: &str, index: usize) -> Clue {
        Clue { text: text.to_string(), index }
    }

    #[test]
    fn toy_graph_counts() {
        let g = toy();
        assert_eq!((g.triple_count(), g.entity_count(), g.relation_count()), (2, 3, 2));
        assert!(g.verify_indexes());
    }

    #[test]
    fn duplicate_triples_stored_once() {
        let g = Graph::parse("a\tr\tb\na\tr\tb\n", TripleFormat::Tsv, &LoadOptions::default()).unwrap();
        assert_eq!(g.triple_count(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = Graph::parse("# header\na\tr\tb\na\tr\n", TripleFormat::Tsv, &LoadOptions::default())
            .unwrap_err();
        assert_eq!(err, GraphError::FieldCount { line: 3, found: 2 });
    }

    #[test]
    fn empty_and_comment_only_sources_fail() {
        for src in ["", "# nothing\n\n"] {
            assert_eq!(
                Graph::parse(src, TripleFormat::Tsv, &LoadOptions::default()).unwrap_err(),
                GraphError::Empty
            );
        }
    }

    #[test]
    fn relations_and_entities_of_toy_graph() {
        let g = toy();
        let china = g.entity("China").unwrap();
        let beijing = g.entity("Beijing").unwrap();
        let capital = g.relation("capital").unwrap();
        let population = g.relation("population").unwrap();
        assert_eq!(g.get_relations(china).unwrap(), &[capital]);
        assert_eq!(g.get_relations(beijing).unwrap(), &[population]);
        assert_eq!(g.get_entities(china, capital).unwrap(), &[beijing]);
        assert!(g.get_entities(china, population).unwrap().is_empty());
    }

    #[test]
    fn unknown_entity_differs_from_sink() {
        let g = toy();
        let sink = g.entity("21,540,000").unwrap();
        assert!(g.get_relations(sink).unwrap().is_empty());
        assert_eq!(g.get_relations(EntityId(99)).unwrap_err(), GraphError::UnknownEntity(99));
        assert_eq!(
            g.get_entities(sink, RelationId(7)).unwrap_err(),
            GraphError::UnknownRelation(7)
        );
    }

    #[test]
    fn starting_points_by_exact_lexical_match() {
        let g = toy();
        let clues = [clue("China", 0), clue("capital", 1), clue("population", 2)];
        let hits = g.find_starting_points(&clues);
        assert_eq!(hits, vec![(clue("China", 0), g.entity("China").unwrap())]);
    }

    #[test]
    fn starting_points_are_case_insensitive_by_default() {
        let g = Graph::parse(
            "madam satan\tfilm.film.country\tthe USA\n",
            TripleFormat::Tsv,
            &LoadOptions::default(),
        )
        .unwrap();
        let clues = [clue("Madam Satan", 0), clue("place", 1)];
        let hits = g.find_starting_points(&clues);
        assert_eq!(hits.len(), 1);
        assert_eq!(g.entity_label(hits[0].1).unwrap(), "madam satan");
    }

    #[test]
    fn starting_points_respect_exact_normalization() {
        let options = LoadOptions { normalization: Normalization::EXACT, ..Default::default() };
        let g = Graph::parse("madam satan\tr\tx\n", TripleFormat::Tsv, &options).unwrap();
        assert!(g.find_starting_points(&[clue("Madam Satan", 0)]).is_empty());
        assert!(g.find_starting_points(&[clue("madam  satan", 0)]).is_empty());
    }

    #[test]
    fn colliding_normalized_labels_all_returned() {
        let g = Graph::parse("Paris\tr\tx\nparis\tr\ty\n", TripleFormat::Tsv, &LoadOptions::default())
            .unwrap();
        let hits = g.find_starting_points(&[clue("PARIS", 0)]);
        assert_eq!(hits.len(), 2);
    }

    #[test]
    fn no_fuzzy_starting_points() {
        let g = toy();
        assert!(g.find_starting_points(&[clue("Chin", 0), clue("Chinese", 1)]).is_empty());
    }

    #[test]
    fn inverse_edges_are_synthesized() {
        let options = LoadOptions { inverse_edges: true, ..Default::default() };
        let g = Graph::parse("China\tcapital\tBeijing\n", TripleFormat::Tsv, &options).unwrap();
        let beijing = g.entity("Beijing").unwrap();
        let inv = g.relation("inv:capital").unwrap();
        assert_eq!(g.get_relations(beijing).unwrap(), &[inv]);
        assert_eq!(g.get_entities(beijing, inv).unwrap(), &[g.entity("China").unwrap()]);
    }

    #[test]
    fn ntriples_loader() {
        let src = "<m.01> <film.film.country> <m.02> .\n<m.01> <type.object.name> \"madam satan\"@en .\n";
        let g = Graph::parse(src, TripleFormat::NTriples, &LoadOptions::default()).unwrap();
        assert_eq!(g.triple_count(), 2);
        assert!(g.entity("madam satan").is_some());
        let bad = Graph::parse("<a> <b> <c>\n", TripleFormat::NTriples, &LoadOptions::default());
        assert!(matches!(bad, Err(GraphError::NTriples { line: 1, .. })));
    }

    #[test]
    fn loading_twice_is_structurally_equal() {
        let text = "a\tr\tb\nb\ts\tc\nc\tr\ta\n";
        let one = Graph::parse(text, TripleFormat::Tsv, &LoadOptions::default()).unwrap();
        let two = Graph::parse(text, TripleFormat::Tsv, &LoadOptions::default()).unwrap();
        assert_eq!(one, two);
    }
}
