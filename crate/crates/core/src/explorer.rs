//! Adaptive, stateful exploration of the graph from clue-matched starting points.
//!
//! Each branch repeatedly maps its candidate clues onto the relations leaving
//! its frontier entity, then onto the entities those relations reach. A hop
//! whose relation and entity map the same clue consumes that clue; a hop
//! whose relation and entity map different clues consumes both. A branch
//! completes once every clue is consumed and fails when either mapping step
//! comes back empty.
//!
//! Exploration runs in rounds: every active branch hops once per round. After
//! the round in which some branch completes, no further rounds run.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clue_state::{Clue, ClueError, ClueSet, ExplorationState};
use crate::exec;
use crate::kg_store::{EntityId, Graph, GraphError, RelationId, Triple};
use crate::llm::{
    parse_verdicts, py_list, py_tuple, Element, LedgerSnapshot, LlmError, MappingVerdict, Permit, PromptKind,
    Session, Slots,
};

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Clue(#[from] ClueError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingPolicy {
    /// Every verdict at or above the threshold spawns a branch.
    #[default]
    All,
    /// Only the single best verdict per mapping step.
    Top1,
}

impl std::str::FromStr for MappingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(MappingPolicy::All),
            "top1" => Ok(MappingPolicy::Top1),
            other => Err(format!("unknown mapping policy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorerConfig {
    /// Minimum verdict score counted as a match.
    pub threshold: u8,
    pub policy: MappingPolicy,
    /// Keep at most this many active branches after each round. Off by default.
    pub branch_cap: Option<usize>,
    /// Keep the per-branch explored-clue record. Off reproduces the stateless ablation.
    pub stateful_record: bool,
    /// Allow a hop to consume two clues (relation and entity mapped to
    /// different clues). Off keeps only single-clue hops.
    pub adaptive_mapping: bool,
    /// Calls left untouched for the answering step.
    pub reserved_calls: u32,
    /// Hop the branches of a round concurrently.
    pub parallel: bool,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        Self {
            threshold: 5,
            policy: MappingPolicy::All,
            branch_cap: None,
            stateful_record: true,
            adaptive_mapping: true,
            reserved_calls: 1,
            parallel: exec::PARALLEL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    RelationMappingEmpty,
    EntityMappingEmpty,
    Budget,
    Cycle,
    Capped,
    /// Still active when another branch completed and exploration stopped.
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum BranchStatus {
    Active,
    Complete,
    Failed(FailReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopCase {
    /// Starting-point clue consumed without extending the path.
    Start,
    /// Relation and entity mapped the same clue.
    SingleClue,
    /// Relation and entity mapped different clues.
    DualClue,
    /// The relation consumed the last clue; all its tails were appended.
    FinalShortcut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpawnRecord {
    pub hop: usize,
    pub case: HopCase,
    pub consumed: Vec<usize>,
    pub verdicts: Vec<MappingVerdict>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: usize,
    pub state: ExplorationState,
    pub frontier: EntityId,
    pub status: BranchStatus,
    pub spawn_trace: Vec<SpawnRecord>,
    /// Mean verdict score of the hop that created this branch.
    pub last_score: f32,
}

impl Branch {
    /// A branch anchored at `start`, with `clue` already consumed.
    pub fn start(id: usize, clue_all: Arc<ClueSet>, clue: &Clue, start: EntityId, stateful: bool) -> Result<Self, ClueError> {
        let fresh = if stateful { ExplorationState::new(clue_all) } else { ExplorationState::stateless(clue_all) };
        let state = fresh.consume_with_path(&BTreeSet::from([clue.index]), &[])?;
        let status = if state.is_complete() { BranchStatus::Complete } else { BranchStatus::Active };
        Ok(Self {
            id,
            state,
            frontier: start,
            status,
            spawn_trace: vec![SpawnRecord { hop: 0, case: HopCase::Start, consumed: vec![clue.index], verdicts: vec![] }],
            last_score: 10.0,
        })
    }

    pub fn path(&self) -> &[Triple] {
        self.state.path()
    }

    pub fn is_active(&self) -> bool {
        self.status == BranchStatus::Active
    }

    pub fn is_complete(&self) -> bool {
        self.status == BranchStatus::Complete
    }

    fn failed(&self, reason: FailReason) -> Self {
        Self { status: BranchStatus::Failed(reason), ..self.clone() }
    }

    fn child(
        &self,
        id: usize,
        consumed: BTreeSet<usize>,
        triples: &[Triple],
        frontier: EntityId,
        case: HopCase,
        verdicts: Vec<MappingVerdict>,
    ) -> Result<Self, ClueError> {
        let state = self.state.consume_with_path(&consumed, triples)?;
        let last_score = verdicts.iter().map(|v| v.score as f32).sum::<f32>() / verdicts.len().max(1) as f32;
        let mut spawn_trace = self.spawn_trace.clone();
        spawn_trace.push(SpawnRecord { hop: state.hops(), case, consumed: consumed.into_iter().collect(), verdicts });
        let complete = state.is_complete();
        let revisits = state.path().iter().any(|t| t.head == frontier);
        let status = match (complete, revisits) {
            (true, _) => BranchStatus::Complete,
            (false, true) => BranchStatus::Failed(FailReason::Cycle),
            (false, false) => BranchStatus::Active,
        };
        Ok(Self { id, state, frontier, status, spawn_trace, last_score })
    }
}

/// Everything one hop produced.
#[derive(Debug, Clone, PartialEq)]
pub struct HopOutcome {
    pub r_mapping: Vec<(Clue, RelationId, u8)>,
    /// Entity verdicts with the relation they were reached through.
    pub e_mapping: Vec<(Clue, RelationId, EntityId, u8)>,
    pub spawned: Vec<Branch>,
    /// Set when the hop spawned nothing.
    pub failure: Option<FailReason>,
    pub prompts: Vec<PromptKind>,
}

/// One audit record per branch-hop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub round: usize,
    pub branch: usize,
    pub prompts: Vec<PromptKind>,
    pub relation_verdicts: Vec<MappingVerdict>,
    pub entity_verdicts: Vec<MappingVerdict>,
    pub children: Vec<(usize, HopCase)>,
    pub failure: Option<FailReason>,
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub branches: Vec<Branch>,
    pub trace: Vec<HopRecord>,
    pub rounds: usize,
    pub calls: LedgerSnapshot,
}

impl Exploration {
    pub fn complete(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(|b| b.is_complete())
    }
}

struct Planned {
    r_mapping: Vec<(Clue, RelationId, u8)>,
    r_verdicts: Vec<MappingVerdict>,
}

/// Outcome of the relation-mapping half of a hop.
enum RelationStep {
    Failed(FailReason, Vec<MappingVerdict>),
    Shortcut(Planned),
    NeedsEntities(Planned),
}

fn accepted<'a>(verdicts: &'a [MappingVerdict], cfg: &ExplorerConfig) -> Vec<&'a MappingVerdict> {
    let mut kept: Vec<&MappingVerdict> = verdicts.iter().filter(|v| v.score >= cfg.threshold).collect();
    if cfg.policy == MappingPolicy::Top1 {
        if let Some(best) = kept.iter().copied().reduce(|a, b| if b.score > a.score { b } else { a }) {
            kept = vec![best];
        }
    }
    kept
}

/// Whether a relation-mapping call is worth making for this branch.
fn has_relation_work(g: &Graph, b: &Branch) -> Result<bool, GraphError> {
    Ok(!g.get_relations(b.frontier)?.is_empty() && !b.state.candidates().is_empty())
}

fn relation_step(
    g: &Graph,
    b: &Branch,
    session: &Session<'_>,
    permit: Permit,
    cfg: &ExplorerConfig,
) -> Result<RelationStep, ExploreError> {
    let candidates = b.state.candidates();
    let relations = g.get_relations(b.frontier)?;
    let labels: Vec<&str> = relations.iter().map(|&r| g.relation_label(r)).collect::<Result<_, _>>()?;
    let clue_texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();

    let slots = Slots::new()
        .with("sentence", b.state.clue_all().question())
        .with("target_information", py_list(&clue_texts))
        .with("relations", py_list(&labels));
    let req = session.render(PromptKind::RelationMapping, &slots)?;
    let response = session.complete_with(permit, &req)?;

    let universe: Vec<Element> = labels.iter().map(|l| Element::Relation(l.to_string())).collect();
    let parsed = parse_verdicts(&response.text, &candidates, &universe);
    session.ledger().note_clamped(parsed.clamped);

    let r_mapping: Vec<(Clue, RelationId, u8)> = accepted(&parsed.verdicts, cfg)
        .into_iter()
        .map(|v| (v.clue.clone(), relations[v.element], v.score))
        .collect();
    if r_mapping.is_empty() {
        return Ok(RelationStep::Failed(FailReason::RelationMappingEmpty, parsed.verdicts));
    }
    let planned = Planned { r_mapping, r_verdicts: parsed.verdicts };
    if b.state.remaining() == 1 {
        Ok(RelationStep::Shortcut(planned))
    } else {
        Ok(RelationStep::NeedsEntities(planned))
    }
}

/// Completes `b` by appending every tail under the accepted relation.
///
/// Applies when consuming the relation's clue leaves nothing for the entity
/// step to map, so the tails themselves are the answer.
pub fn final_hop_shortcut(
    g: &Graph,
    b: &Branch,
    accepted_relation: (&Clue, RelationId),
    id: usize,
    verdict: Option<MappingVerdict>,
) -> Result<Branch, ExploreError> {
    let (clue, relation) = accepted_relation;
    let triples: Vec<Triple> =
        g.get_entities(b.frontier, relation)?.iter().map(|&t| Triple::new(b.frontier, relation, t)).collect();
    Ok(b.child(id, BTreeSet::from([clue.index]), &triples, b.frontier, HopCase::FinalShortcut, verdict.into_iter().collect())?)
}

struct EntityCandidate {
    relation: RelationId,
    entity: EntityId,
    r_verdict: usize,
}

fn entity_universe(g: &Graph, b: &Branch, planned: &Planned) -> Result<(Vec<EntityCandidate>, Vec<Element>), GraphError> {
    let mut candidates = Vec::new();
    let mut elements = Vec::new();
    for (i, (_, relation, _)) in planned.r_mapping.iter().enumerate() {
        let rel_label = g.relation_label(*relation)?;
        for &entity in g.get_entities(b.frontier, *relation)? {
            candidates.push(EntityCandidate { relation: *relation, entity, r_verdict: i });
            elements.push(Element::Entity { relation: rel_label.to_string(), entity: g.entity_label(entity)?.to_string() });
        }
    }
    Ok((candidates, elements))
}

struct EntityStep {
    e_mapping: Vec<(Clue, RelationId, EntityId, u8)>,
    e_verdicts: Vec<MappingVerdict>,
    /// (candidate index, verdict) pairs that passed the threshold.
    accepted: Vec<(usize, MappingVerdict)>,
}

fn entity_step(
    g: &Graph,
    b: &Branch,
    planned: &Planned,
    session: &Session<'_>,
    permit: Permit,
    cfg: &ExplorerConfig,
) -> Result<EntityStep, ExploreError> {
    let candidates = b.state.candidates();
    let clue_texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
    let (pairs, universe) = entity_universe(g, b, planned)?;
    let rendered: Vec<String> = universe
        .iter()
        .map(|e| match e {
            Element::Entity { relation, entity } => py_tuple(&[relation, entity]),
            Element::Relation(r) => py_tuple(&[r]),
        })
        .collect();

    let slots = Slots::new()
        .with("sentence", b.state.clue_all().question())
        .with("information", py_list(&clue_texts))
        .with("candidates", format!("[{}]", rendered.join(", ")));
    let req = session.render(PromptKind::EntityMapping, &slots)?;
    let response = session.complete_with(permit, &req)?;
    let parsed = parse_verdicts(&response.text, &candidates, &universe);
    session.ledger().note_clamped(parsed.clamped);

    let accepted: Vec<(usize, MappingVerdict)> =
        accepted(&parsed.verdicts, cfg).into_iter().map(|v| (v.element, v.clone())).collect();
    let e_mapping = accepted
        .iter()
        .map(|(i, v)| (v.clue.clone(), pairs[*i].relation, pairs[*i].entity, v.score))
        .collect();
    Ok(EntityStep { e_mapping, e_verdicts: parsed.verdicts, accepted })
}

/// Children from a finished entity step, in (relation, entity) order.
fn spawn_children(
    g: &Graph,
    b: &Branch,
    planned: &Planned,
    step: &EntityStep,
    cfg: &ExplorerConfig,
    next_id: &mut usize,
) -> Result<Vec<Branch>, ExploreError> {
    let (pairs, _) = entity_universe(g, b, planned)?;
    let mut accepted = step.accepted.clone();
    accepted.sort_by_key(|(i, _)| *i);
    let mut children = Vec::new();
    for (i, e_verdict) in accepted {
        let pair = &pairs[i];
        let (r_clue, _, _) = &planned.r_mapping[pair.r_verdict];
        let r_verdict = planned
            .r_verdicts
            .iter()
            .find(|v| v.clue == *r_clue && g.relation(&v.element_label) == Some(pair.relation))
            .cloned();
        let (case, consumed) = if e_verdict.clue.index == r_clue.index {
            (HopCase::SingleClue, BTreeSet::from([r_clue.index]))
        } else if cfg.adaptive_mapping {
            (HopCase::DualClue, BTreeSet::from([r_clue.index, e_verdict.clue.index]))
        } else {
            continue;
        };
        let triple = Triple::new(b.frontier, pair.relation, pair.entity);
        let verdicts: Vec<MappingVerdict> = r_verdict.into_iter().chain([e_verdict]).collect();
        match b.child(*next_id, consumed, &[triple], pair.entity, case, verdicts) {
            Ok(child) => {
                children.push(child);
                *next_id += 1;
            }
            // a dual-clue hop on a stateless branch with one clue left to count
            Err(ClueError::Overconsumed { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(children)
}

fn shortcut_children(
    g: &Graph,
    b: &Branch,
    planned: &Planned,
    next_id: &mut usize,
) -> Result<Vec<Branch>, ExploreError> {
    let mut children = Vec::new();
    for (clue, relation, _) in &planned.r_mapping {
        let verdict = planned
            .r_verdicts
            .iter()
            .find(|v| v.clue == *clue && g.relation(&v.element_label) == Some(*relation))
            .cloned();
        children.push(final_hop_shortcut(g, b, (clue, *relation), *next_id, verdict)?);
        *next_id += 1;
    }
    Ok(children)
}

/// Claims a call for exploration, leaving `reserved_calls` for answering.
fn acquire_for_exploration(session: &Session<'_>, cfg: &ExplorerConfig) -> Option<Permit> {
    if session.remaining() <= cfg.reserved_calls {
        return None;
    }
    session.acquire().ok()
}

/// Runs one full hop (both mapping steps) for an active branch.
pub fn hop(
    g: &Graph,
    b: &Branch,
    session: &Session<'_>,
    cfg: &ExplorerConfig,
    next_id: &mut usize,
) -> Result<HopOutcome, ExploreError> {
    let mut outcome = HopOutcome { r_mapping: vec![], e_mapping: vec![], spawned: vec![], failure: None, prompts: vec![] };
    if !has_relation_work(g, b)? {
        outcome.failure = Some(FailReason::RelationMappingEmpty);
        return Ok(outcome);
    }
    let Some(permit) = acquire_for_exploration(session, cfg) else {
        outcome.failure = Some(FailReason::Budget);
        return Ok(outcome);
    };
    outcome.prompts.push(PromptKind::RelationMapping);
    let planned = match relation_step(g, b, session, permit, cfg)? {
        RelationStep::Failed(reason, _) => {
            outcome.failure = Some(reason);
            return Ok(outcome);
        }
        RelationStep::Shortcut(planned) => {
            outcome.r_mapping = planned.r_mapping.clone();
            outcome.spawned = shortcut_children(g, b, &planned, next_id)?;
            return Ok(outcome);
        }
        RelationStep::NeedsEntities(planned) => planned,
    };
    outcome.r_mapping = planned.r_mapping.clone();
    let Some(permit) = acquire_for_exploration(session, cfg) else {
        outcome.failure = Some(FailReason::Budget);
        return Ok(outcome);
    };
    outcome.prompts.push(PromptKind::EntityMapping);
    let step = entity_step(g, b, &planned, session, permit, cfg)?;
    outcome.e_mapping = step.e_mapping.clone();
    outcome.spawned = spawn_children(g, b, &planned, &step, cfg, next_id)?;
    if outcome.spawned.is_empty() {
        outcome.failure = Some(FailReason::EntityMappingEmpty);
    }
    Ok(outcome)
}

/// Keeps the `branch_cap` best active branches by last-hop score (earlier
/// branches win ties); the rest are failed as capped. No cap, no pruning.
pub fn prune(branches: Vec<Branch>, cfg: &ExplorerConfig) -> Vec<Branch> {
    let Some(cap) = cfg.branch_cap else { return branches };
    let mut active: Vec<(usize, f32)> =
        branches.iter().enumerate().filter(|(_, b)| b.is_active()).map(|(i, b)| (i, b.last_score)).collect();
    if active.len() <= cap {
        return branches;
    }
    // stable sort keeps list order among equal scores
    active.sort_by(|a, b| b.1.total_cmp(&a.1));
    let dropped: BTreeSet<usize> = active[cap..].iter().map(|(i, _)| *i).collect();
    branches
        .into_iter()
        .enumerate()
        .map(|(i, b)| if dropped.contains(&i) { b.failed(FailReason::Capped) } else { b })
        .collect()
}

/// Work item for one branch in one round.
struct RoundSlot {
    branch: Branch,
    permit: Option<Permit>,
}

/// Explores from every starting point until a round produces a complete
/// branch or nothing is left active.
pub fn explore_question(
    g: &Graph,
    clues: Arc<ClueSet>,
    starts: &[(Clue, EntityId)],
    session: &Session<'_>,
    cfg: &ExplorerConfig,
) -> Result<Exploration, ExploreError> {
    let before = session.ledger().snapshot();
    let mut branches = Vec::with_capacity(starts.len());
    for (i, (clue, entity)) in starts.iter().enumerate() {
        branches.push(Branch::start(i, clues.clone(), clue, *entity, cfg.stateful_record)?);
    }
    let mut next_id = branches.len();
    let mut trace = Vec::new();
    let mut rounds = 0;

    while !branches.iter().any(Branch::is_complete) && branches.iter().any(Branch::is_active) {
        rounds += 1;
        let (next, records) = run_round(g, branches, session, cfg, &mut next_id, rounds)?;
        trace.extend(records);
        branches = prune(next, cfg);
    }
    if branches.iter().any(Branch::is_complete) {
        branches = branches
            .into_iter()
            .map(|b| if b.is_active() { b.failed(FailReason::Stopped) } else { b })
            .collect();
    }
    branches.sort_by_key(|b| b.id);
    Ok(Exploration { branches, trace, rounds, calls: session.ledger().snapshot().since(&before) })
}

fn run_round(
    g: &Graph,
    branches: Vec<Branch>,
    session: &Session<'_>,
    cfg: &ExplorerConfig,
    next_id: &mut usize,
    round: usize,
) -> Result<(Vec<Branch>, Vec<HopRecord>), ExploreError> {
    // Relation step. Permits are handed out in branch order before any call
    // is made, so who runs out of budget does not depend on scheduling.
    let mut slots = Vec::with_capacity(branches.len());
    let mut settled: Vec<Option<Branch>> = Vec::with_capacity(branches.len());
    let mut records: Vec<Option<HopRecord>> = Vec::with_capacity(branches.len());
    for b in branches {
        let mut record = HopRecord {
            round,
            branch: b.id,
            prompts: vec![],
            relation_verdicts: vec![],
            entity_verdicts: vec![],
            children: vec![],
            failure: None,
        };
        if !b.is_active() {
            settled.push(Some(b));
            records.push(None);
            slots.push(None);
            continue;
        }
        if !has_relation_work(g, &b)? {
            record.failure = Some(FailReason::RelationMappingEmpty);
            settled.push(Some(b.failed(FailReason::RelationMappingEmpty)));
            records.push(Some(record));
            slots.push(None);
            continue;
        }
        let permit = acquire_for_exploration(session, cfg);
        if permit.is_none() {
            record.failure = Some(FailReason::Budget);
            settled.push(Some(b.failed(FailReason::Budget)));
            records.push(Some(record));
            slots.push(None);
            continue;
        }
        record.prompts.push(PromptKind::RelationMapping);
        settled.push(None);
        records.push(Some(record));
        slots.push(Some(RoundSlot { branch: b, permit }));
    }

    let permits: Vec<Mutex<Option<Permit>>> =
        slots.iter_mut().map(|s| Mutex::new(s.as_mut().and_then(|s| s.permit.take()))).collect();
    let work: Vec<(usize, &Branch)> =
        slots.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|s| (i, &s.branch))).collect();
    let relation_results = exec::map_ordered(&work, cfg.parallel, |(i, b)| {
        let permit = permits[*i].lock().expect("permit lock").take().expect("permit assigned");
        relation_step(g, b, session, permit, cfg)
    });

    // Entity step for branches that need it, permits again in branch order.
    let mut steps: Vec<Option<RelationStep>> = (0..slots.len()).map(|_| None).collect();
    for ((i, _), result) in work.iter().zip(relation_results) {
        steps[*i] = Some(result?);
    }
    let mut entity_permits: Vec<Mutex<Option<Permit>>> = Vec::with_capacity(slots.len());
    let mut entity_work = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        let mut permit = None;
        if let Some(RelationStep::NeedsEntities(planned)) = step {
            permit = acquire_for_exploration(session, cfg);
            if permit.is_some() {
                entity_work.push((i, &slots[i].as_ref().expect("slot").branch, planned));
                records[i].as_mut().expect("record").prompts.push(PromptKind::EntityMapping);
            }
        }
        entity_permits.push(Mutex::new(permit));
    }
    let entity_results = exec::map_ordered(&entity_work, cfg.parallel, |(i, b, planned)| {
        let permit = entity_permits[*i].lock().expect("permit lock").take().expect("permit assigned");
        entity_step(g, b, planned, session, permit, cfg)
    });
    let mut entity_steps: Vec<Option<EntityStep>> = (0..slots.len()).map(|_| None).collect();
    for ((i, _, _), result) in entity_work.iter().zip(entity_results) {
        entity_steps[*i] = Some(result?);
    }

    // Assemble in branch order so ids and output are worker-count independent.
    let mut next = Vec::new();
    let mut out_records = Vec::new();
    for i in 0..slots.len() {
        if let Some(b) = settled[i].take() {
            next.push(b);
            out_records.extend(records[i].take());
            continue;
        }
        let b = &slots[i].as_ref().expect("slot").branch;
        let mut record = records[i].take().expect("record");
        let (children, failure) = match steps[i].take().expect("relation step") {
            RelationStep::Failed(reason, verdicts) => {
                record.relation_verdicts = verdicts;
                (vec![], Some(reason))
            }
            RelationStep::Shortcut(planned) => {
                let children = shortcut_children(g, b, &planned, next_id)?;
                record.relation_verdicts = planned.r_verdicts;
                (children, None)
            }
            RelationStep::NeedsEntities(planned) => match entity_steps[i].take() {
                None => {
                    record.relation_verdicts = planned.r_verdicts;
                    (vec![], Some(FailReason::Budget))
                }
                Some(step) => {
                    let children = spawn_children(g, b, &planned, &step, cfg, next_id)?;
                    record.relation_verdicts = planned.r_verdicts;
                    record.entity_verdicts = step.e_verdicts;
                    let failure = children.is_empty().then_some(FailReason::EntityMappingEmpty);
                    (children, failure)
                }
            },
        };
        record.children = children.iter().map(|c| (c.id, c.spawn_trace.last().expect("spawned").case)).collect();
        record.failure = failure;
        match failure {
            Some(reason) => next.push(b.failed(reason)),
            None => next.extend(children),
        }
        out_records.push(record);
    }
    Ok((next, out_records))
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailReason::RelationMappingEmpty => "r-mapping empty",
            FailReason::EntityMappingEmpty => "e-mapping empty",
            FailReason::Budget => "budget",
            FailReason::Cycle => "cycle",
            FailReason::Capped => "capped",
            FailReason::Stopped => "stopped",
        })
    }
}
