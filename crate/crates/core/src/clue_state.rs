//! Fine-grained clues and the per-branch record of which ones have been mapped.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg_store::{Normalization, Triple};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClueError {
    #[error("clue {0} was already explored on this branch")]
    AlreadyExplored(usize),
    #[error("clue index {0} is not part of the clue set")]
    UnknownClue(usize),
    #[error("consume requires at least one clue index")]
    NothingToConsume,
    #[error("consuming {requested} clues exceeds the {remaining} remaining")]
    Overconsumed { requested: usize, remaining: usize },
    #[error("variant {0} needs at least one clue that is not a starting point")]
    NoNonStartingClue(ClueVariant),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Clue {
    pub text: String,
    pub index: usize,
}

impl fmt::Display for Clue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// The ordered clue list extracted from one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClueSet {
    clues: Vec<Clue>,
    question: String,
}

impl ClueSet {
    /// Trims each text, drops empties and merges duplicates (by normalized
    /// text, first spelling wins). Indexes are reassigned densely.
    pub fn new<I, S>(question: impl Into<String>, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let norm = Normalization::default();
        let mut seen = BTreeSet::new();
        let mut clues = Vec::new();
        for text in texts {
            let trimmed = text.as_ref().trim();
            if trimmed.is_empty() || !seen.insert(norm.apply(trimmed)) {
                continue;
            }
            clues.push(Clue { text: trimmed.to_string(), index: clues.len() });
        }
        Self { clues, question: question.into() }
    }

    pub fn clues(&self) -> &[Clue] {
        &self.clues
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    pub fn len(&self) -> usize {
        self.clues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clues.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Clue> {
        self.clues.get(index)
    }

    pub fn texts(&self) -> Vec<&str> {
        self.clues.iter().map(|c| c.text.as_str()).collect()
    }
}

/// What one branch has mapped so far: the explored set and the path.
///
/// Values are never mutated in place; [`ExplorationState::consume`] returns a
/// new state so sibling branches cannot observe each other's records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplorationState {
    clue_all: Arc<ClueSet>,
    explored: BTreeSet<usize>,
    path: Vec<Triple>,
    hops: usize,
    consumed: usize,
    stateful: bool,
}

impl ExplorationState {
    pub fn new(clue_all: Arc<ClueSet>) -> Self {
        Self { clue_all, explored: BTreeSet::new(), path: Vec::new(), hops: 0, consumed: 0, stateful: true }
    }

    /// A state that keeps no record: candidates are always the full clue set
    /// and completion is reached once as many clues have been consumed as
    /// exist. Used for the stateful-record ablation.
    pub fn stateless(clue_all: Arc<ClueSet>) -> Self {
        Self { stateful: false, ..Self::new(clue_all) }
    }

    pub fn clue_all(&self) -> &Arc<ClueSet> {
        &self.clue_all
    }

    pub fn explored(&self) -> &BTreeSet<usize> {
        &self.explored
    }

    pub fn path(&self) -> &[Triple] {
        &self.path
    }

    /// Number of consume events that extended the path.
    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn is_stateful(&self) -> bool {
        self.stateful
    }

    /// Candidate clues `clue_all - explored`, in original order.
    pub fn candidates(&self) -> Vec<Clue> {
        self.clue_all
            .clues()
            .iter()
            .filter(|c| !self.stateful || !self.explored.contains(&c.index))
            .cloned()
            .collect()
    }

    /// Clues still to be mapped before the branch counts as complete.
    pub fn remaining(&self) -> usize {
        if self.stateful {
            self.clue_all.len() - self.explored.len()
        } else {
            self.clue_all.len().saturating_sub(self.consumed)
        }
    }

    pub fn is_complete(&self) -> bool {
        self.remaining() == 0
    }

    /// Marks `clue_indexes` explored and extends the path by `triple`.
    pub fn consume(&self, clue_indexes: &BTreeSet<usize>, triple: Triple) -> Result<Self, ClueError> {
        self.consume_with_path(clue_indexes, &[triple])
    }

    /// Like [`consume`](Self::consume) but appends any number of triples
    /// (none for a starting point, several for a multi-tail final hop).
    pub fn consume_with_path(&self, clue_indexes: &BTreeSet<usize>, triples: &[Triple]) -> Result<Self, ClueError> {
        if clue_indexes.is_empty() {
            return Err(ClueError::NothingToConsume);
        }
        for &i in clue_indexes {
            if i >= self.clue_all.len() {
                return Err(ClueError::UnknownClue(i));
            }
            if self.stateful && self.explored.contains(&i) {
                return Err(ClueError::AlreadyExplored(i));
            }
        }
        if clue_indexes.len() > self.remaining() {
            return Err(ClueError::Overconsumed { requested: clue_indexes.len(), remaining: self.remaining() });
        }
        let mut next = self.clone();
        if self.stateful {
            next.explored.extend(clue_indexes.iter().copied());
        }
        next.consumed += clue_indexes.len();
        if !triples.is_empty() {
            next.path.extend_from_slice(triples);
            next.hops += 1;
        }
        Ok(next)
    }
}

/// Clue-set perturbations used to probe robustness to extraction quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClueVariant {
    #[default]
    None,
    SpMatched,
    ClueTrunc,
    ClueExt,
    NoiseAdd,
}

impl fmt::Display for ClueVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClueVariant::None => "none",
            ClueVariant::SpMatched => "sp_matched",
            ClueVariant::ClueTrunc => "clue_trunc",
            ClueVariant::ClueExt => "clue_ext",
            ClueVariant::NoiseAdd => "noise_add",
        })
    }
}

impl std::str::FromStr for ClueVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_lowercase().as_str() {
            "none" => Ok(ClueVariant::None),
            "sp_matched" => Ok(ClueVariant::SpMatched),
            "clue_trunc" => Ok(ClueVariant::ClueTrunc),
            "clue_ext" => Ok(ClueVariant::ClueExt),
            "noise_add" => Ok(ClueVariant::NoiseAdd),
            other => Err(format!("unknown clue variant '{other}'")),
        }
    }
}

pub const DEFAULT_DISTRACTORS: &[&str] = &[
    "banana", "umbrella", "violin", "glacier", "origami", "lantern", "saxophone", "meteor",
    "cinnamon", "trampoline", "walrus", "kaleidoscope",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantOptions {
    pub distractors: Vec<String>,
    /// How many distractor clues `noise_add` appends.
    pub noise_count: usize,
}

impl Default for VariantOptions {
    fn default() -> Self {
        Self { distractors: DEFAULT_DISTRACTORS.iter().map(|s| s.to_string()).collect(), noise_count: 1 }
    }
}

/// First word of a multi-word clue, or the single word repeated.
pub fn truncate_clue(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    match words.as_slice() {
        [single] => format!("{single} {single}"),
        [first, ..] => first.to_string(),
        [] => String::new(),
    }
}

pub fn apply_variant(
    cs: &ClueSet,
    variant: ClueVariant,
    rng_seed: u64,
    sp_hits: &[Clue],
) -> Result<ClueSet, ClueError> {
    apply_variant_with(cs, variant, rng_seed, sp_hits, &VariantOptions::default())
}

pub fn apply_variant_with(
    cs: &ClueSet,
    variant: ClueVariant,
    rng_seed: u64,
    sp_hits: &[Clue],
    options: &VariantOptions,
) -> Result<ClueSet, ClueError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let is_sp = |c: &Clue| sp_hits.iter().any(|s| s.index == c.index);
    let non_sp: Vec<&Clue> = cs.clues().iter().filter(|c| !is_sp(c)).collect();
    let texts = cs.texts();

    let out: Vec<String> = match variant {
        ClueVariant::None => return Ok(cs.clone()),
        ClueVariant::SpMatched => cs.clues().iter().filter(|c| is_sp(c)).map(|c| c.text.clone()).collect(),
        ClueVariant::ClueTrunc => {
            let chosen = non_sp.choose(&mut rng).ok_or(ClueError::NoNonStartingClue(variant))?;
            cs.clues()
                .iter()
                .map(|c| if c.index == chosen.index { truncate_clue(&c.text) } else { c.text.clone() })
                .collect()
        }
        ClueVariant::ClueExt => {
            let chosen = non_sp.choose(&mut rng).ok_or(ClueError::NoNonStartingClue(variant))?;
            let mut all: Vec<String> = texts.iter().map(|s| s.to_string()).collect();
            all.push(truncate_clue(&chosen.text));
            all
        }
        ClueVariant::NoiseAdd => {
            let norm = Normalization::default();
            let present: BTreeSet<String> = texts.iter().map(|t| norm.apply(t)).collect();
            let pool: Vec<&String> =
                options.distractors.iter().filter(|d| !present.contains(&norm.apply(d))).collect();
            let mut all: Vec<String> = texts.iter().map(|s| s.to_string()).collect();
            all.extend(
                pool.choose_multiple(&mut rng, options.noise_count.min(pool.len())).map(|s| s.to_string()),
            );
            all
        }
    };
    Ok(ClueSet::new(cs.question(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg_store::{EntityId, RelationId};
    use proptest::prelude::*;

    fn set(texts: &[&str]) -> Arc<ClueSet> {
        Arc::new(ClueSet::new("q", texts.iter().copied()))
    }

    fn idx(items: &[usize]) -> BTreeSet<usize> {
        items.iter().copied().collect()
    }

    fn t(h: u32, r: u32, tl: u32) -> Triple {
        Triple::new(EntityId(h), RelationId(r), EntityId(tl))
    }

    #[test]
    fn clue_set_merges_duplicates_and_trims() {
        let cs = ClueSet::new("q", ["  China ", "capital", "china", "", "Capital  "]);
        assert_eq!(cs.texts(), vec!["China", "capital"]);
        assert_eq!(cs.clues()[1].index, 1);
    }

    #[test]
    fn candidates_exclude_explored() {
        let s = ExplorationState::new(set(&["China", "capital", "population"]));
        let s = s.consume_with_path(&idx(&[0]), &[]).unwrap();
        let texts: Vec<String> = s.candidates().into_iter().map(|c| c.text).collect();
        assert_eq!(texts, vec!["capital", "population"]);
        let done = s.consume_with_path(&idx(&[1, 2]), &[t(0, 0, 1)]).unwrap();
        assert!(done.candidates().is_empty());
        assert!(done.is_complete());
    }

    #[test]
    fn consume_extends_path_and_leaves_input_untouched() {
        let s0 = ExplorationState::new(set(&["China", "capital", "population"]))
            .consume_with_path(&idx(&[0]), &[])
            .unwrap();
        let s1 = s0.consume(&idx(&[1]), t(0, 0, 1)).unwrap();
        assert_eq!(s1.explored(), &idx(&[0, 1]));
        assert_eq!(s1.path(), &[t(0, 0, 1)]);
        assert_eq!(s0.explored(), &idx(&[0]));
        assert!(s0.path().is_empty());
    }

    #[test]
    fn dual_clue_consume() {
        let s = ExplorationState::new(set(&["a", "b", "c"]));
        let s = s.consume(&idx(&[1, 2]), t(0, 0, 1)).unwrap();
        assert_eq!(s.explored().len(), 2);
        assert_eq!(s.path().len(), 1);
    }

    #[test]
    fn consuming_twice_errors() {
        let s = ExplorationState::new(set(&["a", "b", "c"]));
        let s = s.consume(&idx(&[1]), t(0, 0, 1)).unwrap();
        assert_eq!(s.consume(&idx(&[1]), t(1, 0, 2)).unwrap_err(), ClueError::AlreadyExplored(1));
        assert_eq!(s.consume(&idx(&[]), t(1, 0, 2)).unwrap_err(), ClueError::NothingToConsume);
        assert_eq!(s.consume(&idx(&[9]), t(1, 0, 2)).unwrap_err(), ClueError::UnknownClue(9));
    }

    #[test]
    fn stateless_state_allows_revisits_but_counts_consumption() {
        let s = ExplorationState::stateless(set(&["a", "b"]));
        let s = s.consume(&idx(&[0]), t(0, 0, 1)).unwrap();
        assert_eq!(s.candidates().len(), 2);
        let s = s.consume(&idx(&[0]), t(1, 0, 2)).unwrap();
        assert!(s.is_complete());
        assert_eq!(s.hops(), 2);
    }

    #[test]
    fn truncation_rules() {
        assert_eq!(truncate_clue("madam satan"), "madam");
        assert_eq!(truncate_clue("place"), "place place");
    }

    #[test]
    fn clue_trunc_on_madam_satan() {
        let cs = ClueSet::new("q", ["madam satan", "place"]);
        // "place" is the starting point, so the only truncation target is "madam satan"
        let sp = vec![cs.clues()[1].clone()];
        let out = apply_variant(&cs, ClueVariant::ClueTrunc, 3, &sp).unwrap();
        assert_eq!(out.texts(), vec!["madam", "place"]);
    }

    #[test]
    fn variant_none_is_identity() {
        let cs = ClueSet::new("q", ["China", "capital"]);
        assert_eq!(apply_variant(&cs, ClueVariant::None, 1, &[]).unwrap(), cs);
    }

    #[test]
    fn noise_add_appends_distractor() {
        let cs = ClueSet::new("q", ["China", "capital"]);
        let options = VariantOptions { distractors: vec!["banana".into()], noise_count: 1 };
        let out = apply_variant_with(&cs, ClueVariant::NoiseAdd, 7, &[], &options).unwrap();
        assert_eq!(out.texts(), vec!["China", "capital", "banana"]);
    }

    #[test]
    fn sp_matched_and_clue_ext() {
        let cs = ClueSet::new("q", ["China", "capital city", "population"]);
        let sp = vec![cs.clues()[0].clone()];
        let only_sp = apply_variant(&cs, ClueVariant::SpMatched, 0, &sp).unwrap();
        assert_eq!(only_sp.texts(), vec!["China"]);
        let ext = apply_variant(&cs, ClueVariant::ClueExt, 0, &sp).unwrap();
        assert_eq!(ext.len(), 4);
        assert!(["capital", "population population"].contains(&ext.texts()[3]));
    }

    #[test]
    fn unsatisfiable_variant_names_itself() {
        let cs = ClueSet::new("q", ["China"]);
        let sp = vec![cs.clues()[0].clone()];
        let err = apply_variant(&cs, ClueVariant::ClueTrunc, 0, &sp).unwrap_err();
        assert_eq!(err, ClueError::NoNonStartingClue(ClueVariant::ClueTrunc));
        assert!(err.to_string().contains("clue_trunc"));
    }

    proptest! {
        #[test]
        fn candidates_equal_set_difference(n in 1usize..12, mask in any::<u16>()) {
            let texts: Vec<String> = (0..n).map(|i| format!("clue{i}")).collect();
            let cs = Arc::new(ClueSet::new("q", &texts));
            let chosen: BTreeSet<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let mut s = ExplorationState::new(cs.clone());
            if !chosen.is_empty() {
                s = s.consume_with_path(&chosen, &[]).unwrap();
            }
            let expected: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            let got: Vec<usize> = s.candidates().iter().map(|c| c.index).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn variants_are_deterministic_per_seed(seed in any::<u64>(), which in 0usize..5) {
            let variant = [ClueVariant::None, ClueVariant::SpMatched, ClueVariant::ClueTrunc,
                ClueVariant::ClueExt, ClueVariant::NoiseAdd][which];
            let cs = ClueSet::new("q", ["alpha", "beta gamma", "delta", "epsilon zeta"]);
            let sp = vec![cs.clues()[0].clone()];
            prop_assert_eq!(
                apply_variant(&cs, variant, seed, &sp).unwrap(),
                apply_variant(&cs, variant, seed, &sp).unwrap()
            );
        }
    }
}
