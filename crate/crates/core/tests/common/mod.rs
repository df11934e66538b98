#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Mutex;

use fiske::harness::{load_qa, QAItem};
use fiske::kg_store::{GraphBuilder, TripleFormat};
use fiske::explorer::{Exploration, HopCase};
use fiske::llm::scripted::{ScriptRecord, ScriptedBackend};
use fiske::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, PromptKind};
use fiske::{Graph, LoadOptions, Triple};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn suite() -> (Graph, Vec<QAItem>) {
    let dir = data_dir().join("synthetic");
    let g = Graph::load(&dir.join("graph.tsv"), &LoadOptions::default()).unwrap();
    (g, load_qa(&dir.join("qa.jsonl")).unwrap())
}

pub fn tsv(text: &str) -> Graph {
    Graph::parse(text, TripleFormat::Tsv, &LoadOptions::default()).unwrap()
}

pub fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn labels(g: &Graph, path: &[Triple]) -> Vec<(String, String, String)> {
    path.iter()
        .map(|t| {
            let (h, r, tl) = g.labels_of(t).unwrap();
            (h.to_string(), r.to_string(), tl.to_string())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// random graphs

pub const VOCAB: &[&str] =
    &["amber", "birch", "cedar", "delta", "ember", "fjord", "grove", "harbor", "iris", "jade", "kelp", "lumen"];

pub struct RandomCase {
    pub graph: Graph,
    pub clues: Vec<String>,
}

fn phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=2);
    VOCAB.choose_multiple(rng, n).copied().collect::<Vec<_>>().join(" ")
}

/// A graph of at most `max_triples` triples over short vocabulary labels,
/// with a clue list whose first clue names an entity that has out-edges.
pub fn random_case(seed: u64, max_triples: usize) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entities = BTreeSet::new();
    let n_entities = rng.random_range(3..=10);
    while entities.len() < n_entities {
        entities.insert(phrase(&mut rng));
    }
    let entities: Vec<String> = entities.into_iter().collect();
    let relations: Vec<String> = (0..rng.random_range(2..=6))
        .map(|_| {
            let n = rng.random_range(1..=2);
            let words: Vec<&str> = VOCAB.choose_multiple(&mut rng, n).copied().collect();
            format!("x.{}", words.join("_"))
        })
        .collect();
    let mut builder = GraphBuilder::new();
    let n_triples = rng.random_range(3..=max_triples);
    let mut heads = Vec::new();
    for _ in 0..n_triples {
        let h = entities.choose(&mut rng).unwrap();
        let r = relations.choose(&mut rng).unwrap();
        let t = entities.choose(&mut rng).unwrap();
        builder.add(h, r, t);
        heads.push(h.clone());
    }
    let graph = builder.build(&LoadOptions::default()).unwrap();

    let mut clues = vec![heads.choose(&mut rng).unwrap().clone()];
    for _ in 0..rng.random_range(1..=3) {
        let p = phrase(&mut rng);
        if !clues.contains(&p) {
            clues.push(p);
        }
    }
    RandomCase { graph, clues }
}

// ---------------------------------------------------------------------------
// brute-force enumeration

pub type LabelPath = Vec<(String, String, String)>;

fn tokens(text: &str) -> BTreeSet<String> {
    let spaced: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c == '.' || c == '_' { ' ' } else { c })
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    spaced.split_whitespace().map(String::from).collect()
}

fn score(clue: &str, label: &str) -> u8 {
    let c = tokens(clue);
    if c.is_empty() {
        return 0;
    }
    let shared = c.intersection(&tokens(label)).count();
    (10.0 * shared as f64 / c.len() as f64).round() as u8
}

fn norm(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

struct Dfs<'a> {
    clues: &'a [String],
    theta: u8,
    out: BTreeMap<usize, BTreeSet<LabelPath>>,
    adjacency: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl Dfs<'_> {
    fn best_relation_clue(&self, cands: &[usize], rel: &str) -> (usize, u8) {
        let mut best = (cands[0], score(&self.clues[cands[0]], rel));
        for &c in &cands[1..] {
            let s = score(&self.clues[c], rel);
            if s > best.1 {
                best = (c, s);
            }
        }
        best
    }

    fn best_entity_clue(&self, cands: &[usize], rel: &str, ent: &str) -> (usize, u8) {
        let key = |c: usize| {
            let by_entity = score(&self.clues[c], ent);
            (by_entity.max(score(&self.clues[c], rel)), by_entity)
        };
        let mut best = (cands[0], key(cands[0]));
        for &c in &cands[1..] {
            if key(c) > best.1 {
                best = (c, key(c));
            }
        }
        (best.0, best.1 .0)
    }

    fn walk(&mut self, frontier: &str, consumed: &BTreeSet<usize>, path: &[(String, String, String)], depth: usize) {
        if consumed.len() == self.clues.len() {
            self.out.entry(depth).or_default().insert(path.to_vec());
            return;
        }
        let cands: Vec<usize> = (0..self.clues.len()).filter(|c| !consumed.contains(c)).collect();
        let Some(rels) = self.adjacency.get(frontier).cloned() else { return };
        let accepted: Vec<(String, usize, Vec<String>)> = rels
            .into_iter()
            .filter_map(|(r, tails)| {
                let (c, s) = self.best_relation_clue(&cands, &r);
                (s >= self.theta).then_some((r, c, tails))
            })
            .collect();
        for (r, rc, tails) in accepted {
            if cands.len() == 1 {
                let mut next = path.to_vec();
                next.extend(tails.iter().map(|t| (frontier.to_string(), r.clone(), t.clone())));
                self.out.entry(depth + 1).or_default().insert(next);
                continue;
            }
            for t in tails {
                let (ec, s) = self.best_entity_clue(&cands, &r, &t);
                if s < self.theta {
                    continue;
                }
                let mut used = consumed.clone();
                used.insert(rc);
                used.insert(ec);
                let mut next = path.to_vec();
                next.push((frontier.to_string(), r.clone(), t.clone()));
                if used.len() < self.clues.len() && next.iter().any(|(h, _, _)| *h == t) {
                    continue;
                }
                self.walk(&t, &used, &next, depth + 1);
            }
        }
    }
}

/// Every complete path reachable under the token-overlap scorer, keeping
/// only those at the smallest hop count (exploration stops after the first
/// round that completes a branch).
pub fn brute_force(g: &Graph, clues: &[String], theta: u8) -> BTreeSet<LabelPath> {
    let mut adjacency: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
    for t in g.triples() {
        let (h, r, tl) = g.labels_of(t).unwrap();
        adjacency.entry(h.into()).or_default().entry(r.into()).or_default().push(tl.into());
    }
    for rels in adjacency.values_mut() {
        for tails in rels.values_mut() {
            tails.sort();
            tails.dedup();
        }
    }
    let entity_labels: BTreeSet<String> =
        g.triples().iter().flat_map(|t| {
            let (h, _, tl) = g.labels_of(t).unwrap();
            [h.to_string(), tl.to_string()]
        }).collect();
    let mut dfs = Dfs { clues, theta, out: BTreeMap::new(), adjacency };
    for (i, clue) in clues.iter().enumerate() {
        for label in entity_labels.iter().filter(|l| norm(l) == norm(clue)) {
            dfs.walk(label, &BTreeSet::from([i]), &[], 0);
        }
    }
    dfs.out.into_iter().next().map(|(_, paths)| paths).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// prompt inspection for dynamic backends

/// Value after the last line starting with `prefix`.
pub fn field<'a>(prompt: &'a str, prefix: &str) -> &'a str {
    prompt.lines().rev().find_map(|l| l.strip_prefix(prefix)).unwrap_or("").trim()
}

pub fn quoted(s: &str) -> Vec<String> {
    Regex::new(r"'([^']*)'").unwrap().captures_iter(s).map(|c| c[1].to_string()).collect()
}

pub fn pairs(s: &str) -> Vec<(String, String)> {
    Regex::new(r"\('([^']*)', '([^']*)'\)")
        .unwrap()
        .captures_iter(s)
        .map(|c| (c[1].to_string(), c[2].to_string()))
        .collect()
}

/// A backend whose replies are computed from the prompt by a closure, for
/// adversarial and randomized transcripts.
pub struct FnBackend<F> {
    f: Mutex<F>,
}

impl<F> FnBackend<F>
where
    F: FnMut(PromptKind, &str) -> String + Send,
{
    pub fn new(f: F) -> Self {
        Self { f: Mutex::new(f) }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: FnMut(PromptKind, &str) -> String + Send,
{
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let kind: PromptKind = req.tag;
        let text = (self.f.lock().unwrap())(kind, req.user_content());
        Ok(ChatResponse { text, prompt_tokens: 1, completion_tokens: 1 })
    }

    fn name(&self) -> &str {
        "fn"
    }
}

/// Relation and entity lines in the oracle's reply format.
pub fn relation_line(rel: &str, clue: &str, score: u8) -> String {
    format!("- '{rel}' is related to the {clue}, so it's a match, ({score}) score.")
}

pub fn entity_line(rel: &str, ent: &str, clue: &str, score: u8) -> String {
    format!("- ('{rel}', '{ent}') is related to '{clue}', so it's a match, ({score}) score.")
}

// ---------------------------------------------------------------------------
// explorer vs brute force

pub struct Equivalence {
    pub cases: usize,
    pub mismatches: Vec<u64>,
    /// Cases where the enumeration found at least one complete path.
    pub nontrivial: usize,
}

pub fn explored_paths(g: &Graph, clues: &[String], theta: u8) -> BTreeSet<LabelPath> {
    use fiske::llm::oracle::OracleBackend;
    use fiske::llm::Gateway;
    let gw = Gateway::new(std::sync::Arc::new(OracleBackend::new()));
    let session = gw.session(100_000);
    let cs = std::sync::Arc::new(fiske::ClueSet::new("q", clues.iter()));
    let starts = g.find_starting_points(cs.clues());
    let cfg = fiske::ExplorerConfig { threshold: theta, ..Default::default() };
    let x = fiske::explorer::explore_question(g, cs, &starts, &session, &cfg).unwrap();
    x.complete().map(|b| labels(g, b.path())).collect()
}

pub fn check_equivalence(seeds: std::ops::Range<u64>, max_triples: usize) -> Equivalence {
    let mut out = Equivalence { cases: 0, mismatches: vec![], nontrivial: 0 };
    for seed in seeds {
        let case = random_case(seed, max_triples);
        let expected = brute_force(&case.graph, &case.clues, 5);
        let actual = explored_paths(&case.graph, &case.clues, 5);
        out.cases += 1;
        if !expected.is_empty() {
            out.nontrivial += 1;
        }
        if expected != actual {
            out.mismatches.push(seed);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// statefulness

/// Scores every offered element with a random clue and a random score.
pub fn random_scorer(seed: u64) -> impl ChatBackend {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FnBackend::new(move |kind, prompt| match kind {
        PromptKind::RelationMapping => {
            let clues = quoted(field(prompt, "target information:"));
            quoted(field(prompt, "relations:"))
                .iter()
                .map(|r| relation_line(r, clues.choose(&mut rng).unwrap(), rng.random_range(0..=10)))
                .collect::<Vec<_>>()
                .join("\n")
        }
        PromptKind::EntityMapping => {
            let clues = quoted(field(prompt, "information in the sentence:"));
            pairs(field(prompt, "candidate entity:"))
                .iter()
                .map(|(r, e)| entity_line(r, e, clues.choose(&mut rng).unwrap(), rng.random_range(0..=10)))
                .collect::<Vec<_>>()
                .join("\n")
        }
        _ => String::new(),
    })
}

/// Explores a random case with either the random scorer or the oracle;
/// returns the exploration and the clue count.
pub fn explore_random(seed: u64, random: bool) -> (Exploration, usize) {
    let case = random_case(seed, 40);
    let backend: std::sync::Arc<dyn ChatBackend> =
        if random { std::sync::Arc::new(random_scorer(seed)) } else { std::sync::Arc::new(fiske::llm::oracle::OracleBackend::new()) };
    let gw = fiske::llm::Gateway::new(backend);
    let session = gw.session(100_000);
    let cs = std::sync::Arc::new(fiske::ClueSet::new("q", case.clues.iter()));
    let n = cs.len();
    let starts = case.graph.find_starting_points(cs.clues());
    let x = fiske::explorer::explore_question(&case.graph, cs, &starts, &session, &fiske::ExplorerConfig::default()).unwrap();
    (x, n)
}

/// Checks the per-branch record invariants; returns a description of the
/// first violation.
pub fn violations(x: &Exploration, n_clues: usize) -> Option<String> {
    if x.rounds > n_clues {
        return Some(format!("{} rounds for {n_clues} clues", x.rounds));
    }
    for b in &x.branches {
        let mut seen = BTreeSet::new();
        let mut sizes = vec![];
        for step in &b.spawn_trace {
            for &c in &step.consumed {
                if !seen.insert(c) {
                    return Some(format!("branch {} consumed clue {c} twice", b.id));
                }
            }
            if step.case != HopCase::Start && !(1..=2).contains(&step.consumed.len()) {
                return Some(format!("branch {} hop consumed {} clues", b.id, step.consumed.len()));
            }
            sizes.push(n_clues - seen.len());
        }
        if sizes.windows(2).any(|w| w[1] >= w[0]) {
            return Some(format!("branch {} candidates did not shrink: {sizes:?}", b.id));
        }
        if b.state.explored() != &seen {
            return Some(format!("branch {} record disagrees with its trace", b.id));
        }
        if b.state.hops() > n_clues {
            return Some(format!("branch {} took {} hops", b.id, b.state.hops()));
        }
        if b.is_complete() && seen.len() != n_clues {
            return Some(format!("branch {} complete with {} of {n_clues} clues", b.id, seen.len()));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// the dual-clue exemplar: relation and entity map different clues

pub fn brahui() -> (Graph, ScriptedBackend) {
    let g = tsv("Brahui\tlanguage.human_language.main_country\tPakistan\nBrahui\tlanguage.human_language.language_family\tDravidian\n");
    let script = ScriptedBackend::new(vec![
        ScriptRecord::any(
            PromptKind::RelationMapping,
            &format!(
                "{}\n- other relations are not related to any information in the sentence, so they are not match, (0) score.",
                relation_line("language.human_language.main_country", "main spoken language", 9)
            ),
            1,
            1,
        ),
        ScriptRecord::any(
            PromptKind::EntityMapping,
            &entity_line("language.human_language.main_country", "Pakistan", "country", 9),
            1,
            1,
        ),
    ]);
    (g, script)
}
