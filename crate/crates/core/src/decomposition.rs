//! The decision procedure.
//!
//! Every node of the decomposition tree is handled in a fixed order:
//! normalize (trim, then split a component that is not strongly connected),
//! evaluate trivial instances, check Θ1 and refine on failure, check Θ2 per
//! component and refine on failure, otherwise accept. Each refinement emits
//! a finite family of instances, strictly smaller in the size order, one of
//! which is reachable iff the parent is.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::coverability::{theta2, CoverError, Direction, Theta2Check, Theta2Witness};
use crate::diophantine::{theta1_with_fallback, Column, SolverBudget, SolverError, Theta1Error, Theta1Result};
use crate::graph::{scc, MultiGraph};
use crate::model::{refines, validate, Arc, ArcId, Component, Coord, GVass, ModelError, PartialVector, SizeMultiset, StateId, ValidationReport};

/// A plain VASS, before it is wrapped into a one-component GVASS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vass {
    pub dim: usize,
    pub states: Vec<String>,
    pub arcs: Vec<Arc>,
}

/// The reachability question `(from) →* (to)` as a GVASS with one
/// component and every coordinate constrained at both ends.
pub fn vass_to_gvass(
    vass: &Vass,
    from: (StateId, &[BigInt]),
    to: (StateId, &[BigInt]),
) -> Result<GVass, ModelError> {
    for v in [from.1, to.1] {
        if v.len() != vass.dim {
            return Err(ModelError::LengthMismatch { expected: vass.dim, found: v.len() });
        }
        if let Some((coord, value)) = v.iter().enumerate().find(|(_, x)| x.is_negative()) {
            return Err(ModelError::Negative { coord, value: value.clone() });
        }
    }
    let all: Vec<Coord> = (0..vass.dim).collect();
    Ok(GVass {
        dim: vass.dim,
        components: vec![Component {
            name: "main".into(),
            states: vass.states.clone(),
            arcs: vass.arcs.clone(),
            initial: from.0,
            final_state: to.0,
            rigid: PartialVector::new(),
            input: PartialVector::from_full(from.1, &all),
            input_free: BTreeSet::new(),
            output: PartialVector::from_full(to.1, &all),
            output_free: BTreeSet::new(),
        }],
        connectors: vec![],
    })
}

/// Answer for an instance whose size has only zero triples, `None`
/// otherwise.
pub fn check_trivial(g: &GVass) -> Option<bool> {
    if !g.size().is_trivial() {
        return None;
    }
    let states_ok = g.components.iter().all(|c| c.initial == c.final_state);
    let boundaries_ok = g.components.windows(2).zip(&g.connectors).all(|(pair, z)| {
        (0..g.dim).all(|c| {
            let before = pair[0].rigid.get(c).expect("trivial components are rigid everywhere");
            let after = pair[1].rigid.get(c).expect("trivial components are rigid everywhere");
            before + &z[c] == *after
        })
    });
    Some(states_ok && boundaries_ok)
}

fn open_start(comp: &mut Component, dim: usize) {
    comp.input = PartialVector::new();
    comp.input_free = comp.non_rigid(dim);
}

fn open_end(comp: &mut Component, dim: usize) {
    comp.output = PartialVector::new();
    comp.output_free = comp.non_rigid(dim);
}

/// The component restricted to `keep` (sorted state ids), arcs between
/// kept states only. Returns the new component and the old ids of its arcs.
fn restrict(comp: &Component, keep: &[usize], initial: usize, final_state: usize) -> (Component, Vec<usize>) {
    let mut renumber = vec![usize::MAX; comp.states.len()];
    for (new, &old) in keep.iter().enumerate() {
        renumber[old] = new;
    }
    let mut kept_arcs = Vec::new();
    let arcs = comp
        .arcs
        .iter()
        .enumerate()
        .filter(|(_, a)| renumber[a.source.0] != usize::MAX && renumber[a.target.0] != usize::MAX)
        .map(|(k, a)| {
            kept_arcs.push(k);
            Arc { source: StateId(renumber[a.source.0]), target: StateId(renumber[a.target.0]), ..a.clone() }
        })
        .collect();
    let out = Component {
        states: keep.iter().map(|&s| comp.states[s].clone()).collect(),
        arcs,
        initial: StateId(renumber[initial]),
        final_state: StateId(renumber[final_state]),
        ..comp.clone()
    };
    (out, kept_arcs)
}

/// Drops states that are not on any path from the initial to the final
/// state. `None` if there is no such path.
fn trim(comp: &Component) -> Option<Component> {
    let g = MultiGraph::new(comp.states.len(), comp.edges());
    let fwd = g.reachable_from(comp.initial.0);
    if !fwd[comp.final_state.0] {
        return None;
    }
    let bwd = g.co_reachable(comp.final_state.0);
    let keep: Vec<usize> = (0..comp.states.len()).filter(|&s| fwd[s] && bwd[s]).collect();
    if keep.len() == comp.states.len() {
        return Some(comp.clone());
    }
    Some(restrict(comp, &keep, comp.initial.0, comp.final_state.0).0)
}

/// Replaces component `i` by `parts`, joined by `inner` connectors.
fn splice(g: &GVass, i: usize, parts: Vec<Component>, inner: Vec<Vec<BigInt>>) -> GVass {
    debug_assert_eq!(parts.len(), inner.len() + 1);
    let mut components = g.components[..i].to_vec();
    components.extend(parts);
    components.extend_from_slice(&g.components[i + 1..]);
    let mut connectors = g.connectors[..i].to_vec();
    connectors.extend(inner);
    connectors.extend_from_slice(&g.connectors[i..]);
    GVass { dim: g.dim, components, connectors }
}

/// How a child instance was obtained from its parent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Step {
    /// One path through the condensation; the inter-component arcs used.
    Path { arcs: Vec<ArcId> },
    /// The removed arc is used exactly `uses` times.
    Copies { uses: u64 },
    /// A free boundary coordinate fixed to `value`.
    Fix { side: Side, coord: Coord, value: u64 },
    /// A constrained coordinate tracked in the control state, bounded by
    /// `bound`.
    Track { coord: Coord, bound: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    In,
    Out,
}

pub enum Normalized {
    /// Every component (after trimming) is strongly connected.
    StronglyConnected(GVass),
    /// The final state of this component is unreachable from its initial one.
    PrunedInfeasible { component: usize },
    /// The first component that is not strongly connected, and one child per
    /// path through its condensation.
    Split { trimmed: GVass, component: usize, children: Vec<(Step, GVass)> },
}

pub fn normalize(g: &GVass) -> Normalized {
    let mut components = Vec::with_capacity(g.components.len());
    for (i, comp) in g.components.iter().enumerate() {
        match trim(comp) {
            Some(c) => components.push(c),
            None => return Normalized::PrunedInfeasible { component: i },
        }
    }
    let trimmed = GVass { dim: g.dim, components, connectors: g.connectors.clone() };
    for (i, comp) in trimmed.components.iter().enumerate() {
        let cond = scc(&MultiGraph::new(comp.states.len(), comp.edges()));
        if cond.count == 1 {
            continue;
        }
        let children = condensation_paths(comp, &cond)
            .into_iter()
            .map(|(sccs, bridges)| {
                let mut parts = Vec::with_capacity(sccs.len());
                let last = sccs.len() - 1;
                for (t, &s) in sccs.iter().enumerate() {
                    let initial = if t == 0 { comp.initial.0 } else { comp.arcs[bridges[t - 1]].target.0 };
                    let final_state = if t == last { comp.final_state.0 } else { comp.arcs[bridges[t]].source.0 };
                    let (mut part, _) = restrict(comp, &cond.members(s), initial, final_state);
                    part.name = format!("{}.s{t}", comp.name);
                    if t > 0 {
                        open_start(&mut part, g.dim);
                    }
                    if t < last {
                        open_end(&mut part, g.dim);
                    }
                    parts.push(part);
                }
                let inner = bridges.iter().map(|&b| comp.arcs[b].effect.clone()).collect();
                let step = Step::Path { arcs: bridges.iter().map(|&b| ArcId(b)).collect() };
                (step, splice(&trimmed, i, parts, inner))
            })
            .collect();
        return Normalized::Split { trimmed, component: i, children };
    }
    Normalized::StronglyConnected(trimmed)
}

/// All paths through the condensation from the SCC of the initial state to
/// the SCC of the final state, as (SCC ids, bridge arcs).
fn condensation_paths(comp: &Component, cond: &crate::graph::Condensation) -> Vec<(Vec<usize>, Vec<usize>)> {
    let from = cond.membership[comp.initial.0];
    let to = cond.membership[comp.final_state.0];
    let mut out = Vec::new();
    let mut sccs = vec![from];
    let mut bridges = Vec::new();
    fn walk(
        cond: &crate::graph::Condensation,
        to: usize,
        sccs: &mut Vec<usize>,
        bridges: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, Vec<usize>)>,
    ) {
        let at = *sccs.last().expect("path is nonempty");
        if at == to {
            out.push((sccs.clone(), bridges.clone()));
            return;
        }
        for edge in cond.dag.iter().filter(|e| e.from == at) {
            for &b in &edge.edges {
                sccs.push(edge.to);
                bridges.push(b);
                walk(cond, to, sccs, bridges, out);
                sccs.pop();
                bridges.pop();
            }
        }
    }
    walk(cond, to, &mut sccs, &mut bridges, &mut out);
    out
}

/// Θ1 failed because arc `e` of component `i` is used at most `c` times:
/// one child per exact use count `m`, made of `m + 1` copies of the
/// component without `e`, joined by copies of `e`.
pub fn refine_theta1_arc(g: &GVass, i: usize, e: ArcId, c: u64) -> Vec<(Step, GVass)> {
    let comp = &g.components[i];
    let arc = &comp.arcs[e.0];
    let mut base = comp.clone();
    base.arcs.remove(e.0);
    (0..=c)
        .map(|m| {
            let copies = m as usize + 1;
            let parts = (0..copies)
                .map(|t| {
                    let mut part = base.clone();
                    part.name = format!("{}.{t}", comp.name);
                    if t > 0 {
                        part.initial = arc.target;
                        open_start(&mut part, g.dim);
                    }
                    if t + 1 < copies {
                        part.final_state = arc.source;
                        open_end(&mut part, g.dim);
                    }
                    part
                })
                .collect();
            (Step::Copies { uses: m }, splice(g, i, parts, vec![arc.effect.clone(); m as usize]))
        })
        .collect()
}

/// Θ1 failed because a free boundary coordinate `j` of component `i` is at
/// most `c` in every solution: one child per value.
pub fn refine_theta1_coord(g: &GVass, i: usize, side: Side, j: Coord, c: u64) -> Vec<(Step, GVass)> {
    (0..=c).map(|m| (Step::Fix { side, coord: j, value: m }, fix_boundary(g, i, side, j, m))).collect()
}

fn fix_boundary(g: &GVass, i: usize, side: Side, j: Coord, m: u64) -> GVass {
    let mut child = g.clone();
    let comp = &mut child.components[i];
    let (free, fixed) = match side {
        Side::In => (&mut comp.input_free, &mut comp.input),
        Side::Out => (&mut comp.output_free, &mut comp.output),
    };
    assert!(free.remove(&j), "coordinate {j} is not free on the {side:?} side of component {i}");
    fixed.insert(j, BigInt::from(m));
    child
}

/// The component with coordinate `j` moved into the control state, kept in
/// `[0, bound]`, and made rigid with value `rigid_value`.
fn track(comp: &Component, j: Coord, bound: u64, from: u64, to: u64, rigid_value: &BigInt) -> Component {
    let width = bound as usize + 1;
    let states = comp.states.iter().flat_map(|s| (0..width).map(move |n| format!("{s}@{n}"))).collect();
    let mut arcs = Vec::new();
    for a in &comp.arcs {
        let Some(z) = a.effect[j].to_i64() else { continue };
        for n in 0..width as i64 {
            let next = n + z;
            if (0..width as i64).contains(&next) {
                let mut effect = a.effect.clone();
                effect[j] = BigInt::zero();
                arcs.push(Arc::new(
                    format!("{}@{n}", a.name),
                    StateId(a.source.0 * width + n as usize),
                    effect,
                    StateId(a.target.0 * width + next as usize),
                ));
            }
        }
    }
    let mut rigid = comp.rigid.clone();
    rigid.insert(j, rigid_value.clone());
    let mut input = comp.input.clone();
    input.remove(j);
    let mut output = comp.output.clone();
    output.remove(j);
    Component {
        name: format!("{}.x", comp.name),
        states,
        arcs,
        initial: StateId(comp.initial.0 * width + from as usize),
        final_state: StateId(comp.final_state.0 * width + to as usize),
        rigid,
        input,
        input_free: comp.input_free.clone(),
        output,
        output_free: comp.output_free.clone(),
    }
}

fn small_value(x: &BigInt) -> u64 {
    x.to_u64().expect("boundary value too large to track in the control state")
}

/// Θ2 failed for component `i` in `direction` with bound `c`: some
/// constrained coordinate on that side stays `≤ c` along every run.
///
/// For each such coordinate `j` (ascending), if `j` is free on the other
/// side, one child per final (resp. initial) value `0..=c`; otherwise one
/// child where `j` is tracked by the control state and the component is
/// followed (resp. preceded) by an arc-less component carrying the other
/// boundary value of `j`.
pub fn refine_theta2(g: &GVass, i: usize, direction: Direction, c: u64) -> Vec<(Step, GVass)> {
    let comp = &g.components[i];
    let (near, far, far_free, other_side) = match direction {
        Direction::Forward => (&comp.input, &comp.output, &comp.output_free, Side::Out),
        Direction::Backward => (&comp.output, &comp.input, &comp.input_free, Side::In),
    };
    assert!(!near.is_empty(), "Θ2 cannot fail without constrained coordinates");
    let mut out = Vec::new();
    for (j, _) in near.iter() {
        if far_free.contains(&j) {
            out.extend((0..=c).map(|m| (Step::Fix { side: other_side, coord: j, value: m }, fix_boundary(g, i, other_side, j, m))));
            continue;
        }
        assert!(far.contains(j), "coordinate {j} is neither free nor constrained on the far side");
        let a = small_value(comp.input.get(j).expect("constrained at the start"));
        let b = small_value(comp.output.get(j).expect("constrained at the end"));
        let bound = c.max(a).max(b);
        let mut shift = vec![BigInt::zero(); g.dim];
        shift[j] = BigInt::from(b) - BigInt::from(a);
        let mut stub = comp.clone();
        stub.name = format!("{}.y", comp.name);
        stub.states = vec![match direction {
            Direction::Forward => comp.state_name(comp.final_state).to_string(),
            Direction::Backward => comp.state_name(comp.initial).to_string(),
        }];
        stub.arcs.clear();
        stub.initial = StateId(0);
        stub.final_state = StateId(0);
        stub.input.remove(j);
        stub.output.remove(j);
        let parts = match direction {
            Direction::Forward => {
                let mut tracked = track(comp, j, bound, a, b, &BigInt::from(a));
                open_end(&mut tracked, g.dim);
                stub.rigid.insert(j, BigInt::from(b));
                open_start(&mut stub, g.dim);
                vec![tracked, stub]
            }
            Direction::Backward => {
                let mut tracked = track(comp, j, bound, a, b, &BigInt::from(b));
                open_start(&mut tracked, g.dim);
                stub.rigid.insert(j, BigInt::from(a));
                open_end(&mut stub, g.dim);
                vec![stub, tracked]
            }
        };
        out.push((Step::Track { coord: j, bound }, splice(g, i, parts, vec![shift])));
    }
    out
}

/// Limits for [`decide`].
#[derive(Clone, Debug)]
pub struct DecideConfig {
    /// Maximum nodes of a single coverability tree.
    pub km_budget: usize,
    /// Maximum decomposition nodes.
    pub node_budget: usize,
    /// Maximum vectors kept by one Hilbert-basis completion before Θ1
    /// falls back to linear programming.
    pub solver_budget: usize,
    pub time_limit: Option<Duration>,
    /// Worker threads for expanding sibling nodes; 1 is sequential.
    pub jobs: usize,
}

impl Default for DecideConfig {
    fn default() -> Self {
        Self { km_budget: 1_000_000, node_budget: 1_000_000, solver_budget: 20_000, time_limit: None, jobs: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Reachable,
    Unreachable,
    Exhausted,
    /// Not explored because an earlier sibling was reachable.
    Pending,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exhaustion {
    NodeBudget,
    TimeLimit,
    CoverabilityBudget,
}

/// Base vectors and period vectors of a hybrid-linear set.
pub type BasePeriods = (Vec<Vec<u64>>, Vec<Vec<u64>>);

/// Data of an accepted leaf: the solution set of its characteristic
/// system and both pumping witnesses of every component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Certificate {
    pub columns: Vec<Column>,
    /// Base and period vectors, when Θ1 was decided from the Hilbert basis.
    pub hybrid: Option<BasePeriods>,
    pub pumping: Vec<[Theta2Witness; 2]>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum LeafReason {
    /// The final state of a component cannot be reached from its initial one.
    NoPath { component: usize },
    /// Only zero triples; the instance was evaluated directly.
    Trivial,
    /// The characteristic system has no solution.
    NoSolution,
    Certified(Box<Certificate>),
    Exhausted { limit: Exhaustion },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Rule {
    Scc { component: usize, paths: usize },
    Theta1Arc { component: usize, arc: ArcId, bound: u64 },
    Theta1Coord { component: usize, side: Side, coord: Coord, bound: u64 },
    Theta2 { component: usize, direction: Direction, bound: u64 },
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Scc { .. } => "scc",
            Rule::Theta1Arc { .. } => "theta1-arc",
            Rule::Theta1Coord { .. } => "theta1-coord",
            Rule::Theta2 { .. } => "theta2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pending,
    Leaf { verdict: Verdict, reason: LeafReason },
    Refined { rule: Rule, verdict: Verdict, children: Vec<DecompositionNode> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecompositionNode {
    /// The instance after trimming.
    pub gvass: GVass,
    pub size: SizeMultiset,
    pub step: Option<Step>,
    pub outcome: Outcome,
}

impl DecompositionNode {
    pub fn verdict(&self) -> Verdict {
        match &self.outcome {
            Outcome::Pending => Verdict::Pending,
            Outcome::Leaf { verdict, .. } | Outcome::Refined { verdict, .. } => *verdict,
        }
    }

    pub fn children(&self) -> &[DecompositionNode] {
        match &self.outcome {
            Outcome::Refined { children, .. } => children,
            _ => &[],
        }
    }

    /// Visits the subtree in preorder with depths.
    pub fn walk<'a>(&'a self, depth: usize, f: &mut impl FnMut(&'a DecompositionNode, usize)) {
        f(self, depth);
        for child in self.children() {
            child.walk(depth + 1, f);
        }
    }

    fn leaf(gvass: GVass, step: Option<Step>, verdict: Verdict, reason: LeafReason) -> Self {
        let size = gvass.size();
        Self { gvass, size, step, outcome: Outcome::Leaf { verdict, reason } }
    }
}

#[derive(Serialize)]
struct NoParams {}

impl Serialize for DecompositionNode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("DecompositionNode", 6)?;
        match &self.outcome {
            Outcome::Pending => {
                st.serialize_field("rule", "pending")?;
                st.serialize_field("params", &NoParams {})?;
            }
            Outcome::Leaf { reason, .. } => {
                st.serialize_field("rule", "leaf")?;
                st.serialize_field("params", reason)?;
            }
            Outcome::Refined { rule, .. } => {
                st.serialize_field("rule", rule.name())?;
                st.serialize_field("params", rule)?;
            }
        }
        st.serialize_field("size", &self.size)?;
        st.serialize_field("verdict", &self.verdict())?;
        st.serialize_field("step", &self.step)?;
        st.serialize_field("children", self.children())?;
        st.end()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Answer {
    Reachable,
    Unreachable,
    ResourceExhausted,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    /// Explored nodes of the final tree.
    pub nodes: usize,
    pub max_depth: usize,
    pub max_components: usize,
    pub max_states: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub answer: Answer,
    pub root: DecompositionNode,
    pub stats: Stats,
}

#[derive(Debug, Clone, Error)]
pub enum DecideError {
    #[error("invalid instance: {}", .0.violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(ValidationReport),
    #[error("could not start worker threads: {0}")]
    Threads(String),
}

const WORKER_STACK: usize = 256 << 20;

/// Decides whether `g` admits reachability.
pub fn decide(g: &GVass, config: &DecideConfig) -> Result<Decision, DecideError> {
    let report = validate(g);
    if !report.is_valid() {
        return Err(DecideError::Invalid(report));
    }
    let search = Search {
        config: config.clone(),
        deadline: config.time_limit.map(|t| Instant::now() + t),
        nodes: AtomicUsize::new(0),
        parallel: config.jobs > 1,
    };
    let root = if search.parallel {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .stack_size(WORKER_STACK)
            .build()
            .map_err(|e| DecideError::Threads(e.to_string()))?;
        pool.install(|| search.expand(g.clone(), None, None))
    } else {
        let g = g.clone();
        std::thread::scope(|scope| {
            std::thread::Builder::new()
                .stack_size(WORKER_STACK)
                .spawn_scoped(scope, || search.expand(g, None, None))
                .map_err(|e| DecideError::Threads(e.to_string()))?
                .join()
                .map_err(|p| std::panic::resume_unwind(p))
        })?
    };
    let answer = match root.verdict() {
        Verdict::Reachable => Answer::Reachable,
        Verdict::Unreachable => Answer::Unreachable,
        Verdict::Exhausted | Verdict::Pending => Answer::ResourceExhausted,
    };
    let mut stats = Stats::default();
    root.walk(0, &mut |n, depth| {
        if n.verdict() != Verdict::Pending {
            stats.nodes += 1;
        }
        stats.max_depth = stats.max_depth.max(depth);
        stats.max_components = stats.max_components.max(n.gvass.components.len());
        stats.max_states = stats.max_states.max(n.gvass.components.iter().map(|c| c.states.len()).sum());
    });
    Ok(Decision { answer, root, stats })
}

/// Cancellation scope of one sibling list: a child is abandoned once an
/// earlier sibling (or an earlier sibling of an ancestor) is reachable.
struct Cancel<'a> {
    first_reachable: &'a AtomicUsize,
    index: usize,
    parent: Option<&'a Cancel<'a>>,
}

impl Cancel<'_> {
    fn cancelled(&self) -> bool {
        self.first_reachable.load(Ordering::Relaxed) < self.index || self.parent.is_some_and(Cancel::cancelled)
    }
}

struct Search {
    config: DecideConfig,
    deadline: Option<Instant>,
    nodes: AtomicUsize,
    parallel: bool,
}

impl Search {
    fn out_of_time(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    fn expand(&self, g: GVass, step: Option<Step>, cancel: Option<&Cancel>) -> DecompositionNode {
        let exhausted = |g: GVass, step, limit| DecompositionNode::leaf(g, step, Verdict::Exhausted, LeafReason::Exhausted { limit });
        if cancel.is_some_and(Cancel::cancelled) {
            let size = g.size();
            return DecompositionNode { gvass: g, size, step, outcome: Outcome::Pending };
        }
        if self.nodes.fetch_add(1, Ordering::Relaxed) >= self.config.node_budget {
            return exhausted(g, step, Exhaustion::NodeBudget);
        }
        if self.out_of_time() {
            return exhausted(g, step, Exhaustion::TimeLimit);
        }
        let g = match normalize(&g) {
            Normalized::PrunedInfeasible { component } => {
                return DecompositionNode::leaf(g, step, Verdict::Unreachable, LeafReason::NoPath { component });
            }
            Normalized::Split { trimmed, component, children } => {
                let rule = Rule::Scc { component, paths: children.len() };
                return self.refine(trimmed, step, rule, children, cancel);
            }
            Normalized::StronglyConnected(g) => g,
        };
        if let Some(ok) = check_trivial(&g) {
            let verdict = if ok { Verdict::Reachable } else { Verdict::Unreachable };
            return DecompositionNode::leaf(g, step, verdict, LeafReason::Trivial);
        }
        let budget = SolverBudget { max_vectors: self.config.solver_budget, deadline: self.deadline };
        let analysis = match theta1_with_fallback(&g, &budget) {
            Ok(a) => a,
            Err(Theta1Error::Solver(SolverError::Deadline)) => return exhausted(g, step, Exhaustion::TimeLimit),
            Err(Theta1Error::Solver(SolverError::Budget(_))) => unreachable!("budget overruns fall back to the relaxation"),
            Err(Theta1Error::NotStronglyConnected(i)) => unreachable!("component {i} is strongly connected after normalization"),
        };
        match analysis.result {
            Theta1Result::Infeasible => {
                return DecompositionNode::leaf(g, step, Verdict::Unreachable, LeafReason::NoSolution);
            }
            Theta1Result::ZeroCoordinate { column, bound } => {
                let (rule, children) = match column {
                    Column::ArcUse { component, arc } => {
                        (Rule::Theta1Arc { component, arc, bound }, refine_theta1_arc(&g, component, arc, bound))
                    }
                    Column::InUnconstrained { component, coord } => (
                        Rule::Theta1Coord { component, side: Side::In, coord, bound },
                        refine_theta1_coord(&g, component, Side::In, coord, bound),
                    ),
                    Column::OutUnconstrained { component, coord } => (
                        Rule::Theta1Coord { component, side: Side::Out, coord, bound },
                        refine_theta1_coord(&g, component, Side::Out, coord, bound),
                    ),
                };
                return self.refine(g, step, rule, children, cancel);
            }
            Theta1Result::Holds => {}
        }
        if self.out_of_time() {
            return exhausted(g, step, Exhaustion::TimeLimit);
        }
        match theta2(&g.components, self.config.km_budget) {
            Err(CoverError::Budget { .. }) => exhausted(g, step, Exhaustion::CoverabilityBudget),
            Err(e @ CoverError::RigidTouched { .. }) => unreachable!("validated instance: {e}"),
            Ok(Theta2Check::Fails { component, direction, bound }) => {
                let bound = bound.to_u64().expect("coverability bound fits in u64");
                let children = refine_theta2(&g, component, direction, bound);
                self.refine(g, step, Rule::Theta2 { component, direction, bound }, children, cancel)
            }
            Ok(Theta2Check::Holds(pumping)) => {
                let certificate = Certificate {
                    columns: analysis.system.columns,
                    hybrid: analysis.hybrid.map(|h| (h.base, h.periods)),
                    pumping,
                };
                DecompositionNode::leaf(g, step, Verdict::Reachable, LeafReason::Certified(Box::new(certificate)))
            }
        }
    }

    fn refine(
        &self,
        g: GVass,
        step: Option<Step>,
        rule: Rule,
        children: Vec<(Step, GVass)>,
        cancel: Option<&Cancel>,
    ) -> DecompositionNode {
        let size = g.size();
        for (s, child) in &children {
            let child_size = child.size();
            assert!(
                refines(&child_size, &size),
                "refinement {} step {s:?} does not decrease the size: {child_size} vs {size}",
                rule.name()
            );
        }
        let first_reachable = AtomicUsize::new(usize::MAX);
        let run = |(k, (s, child)): (usize, (Step, GVass))| {
            let scope = Cancel { first_reachable: &first_reachable, index: k, parent: cancel };
            let node = self.expand(child, Some(s), Some(&scope));
            if node.verdict() == Verdict::Reachable {
                first_reachable.fetch_min(k, Ordering::Relaxed);
            }
            node
        };
        let mut nodes: Vec<DecompositionNode> = if self.parallel {
            children.into_par_iter().enumerate().map(run).collect()
        } else {
            children.into_iter().enumerate().map(run).collect()
        };
        let winner = nodes.iter().position(|n| n.verdict() == Verdict::Reachable);
        if let Some(w) = winner {
            for n in &mut nodes[w + 1..] {
                n.outcome = Outcome::Pending;
            }
        }
        let verdict = if winner.is_some() {
            Verdict::Reachable
        } else if nodes.iter().any(|n| n.verdict() == Verdict::Exhausted) {
            Verdict::Exhausted
        } else {
            Verdict::Unreachable
        };
        DecompositionNode { gvass: g, size, step, outcome: Outcome::Refined { rule, verdict, children: nodes } }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ints, size_of, SizeTriple};

    fn single(dim: usize, arcs: &[(&str, usize, &[i64], usize)], states: usize, from: (usize, &[i64]), to: (usize, &[i64])) -> GVass {
        let vass = Vass {
            dim,
            states: (0..states).map(|s| format!("q{s}")).collect(),
            arcs: arcs.iter().map(|(n, s, z, t)| Arc::new(*n, StateId(*s), ints(z), StateId(*t))).collect(),
        };
        vass_to_gvass(&vass, (StateId(from.0), &ints(from.1)), (StateId(to.0), &ints(to.1))).unwrap()
    }

    fn answer(g: &GVass) -> Answer {
        decide(g, &DecideConfig::default()).unwrap().answer
    }

    #[test]
    fn vass_to_gvass_examples() {
        let g = single(1, &[("a", 0, &[1], 0)], 1, (0, &[0]), (0, &[5]));
        assert_eq!(size_of(&g).triples(), &[SizeTriple::new(1, 1, 0)]);
        let g = single(2, &[], 1, (0, &[0, 0]), (0, &[1, 1]));
        assert_eq!(g.components[0].input.coords(), BTreeSet::from([0, 1]));
        let vass = Vass { dim: 1, states: vec!["q".into()], arcs: vec![] };
        assert!(matches!(
            vass_to_gvass(&vass, (StateId(0), &ints(&[0])), (StateId(0), &ints(&[-1]))),
            Err(ModelError::Negative { coord: 0, .. })
        ));
    }

    fn rigid_only(states: (usize, usize), r: i64) -> Component {
        Component {
            name: "c".into(),
            states: vec!["p".into(), "q".into()],
            arcs: vec![],
            initial: StateId(states.0),
            final_state: StateId(states.1),
            rigid: [(0, BigInt::from(r))].into_iter().collect(),
            input: PartialVector::new(),
            input_free: BTreeSet::new(),
            output: PartialVector::new(),
            output_free: BTreeSet::new(),
        }
    }

    #[test]
    fn trivial_examples() {
        let g = GVass { dim: 1, components: vec![rigid_only((0, 0), 3)], connectors: vec![] };
        assert_eq!(check_trivial(&g), Some(true));
        let g = GVass { dim: 1, components: vec![rigid_only((0, 1), 3)], connectors: vec![] };
        assert_eq!(check_trivial(&g), Some(false));
        let g = GVass { dim: 1, components: vec![rigid_only((0, 0), 1), rigid_only((1, 1), 2)], connectors: vec![ints(&[1])] };
        assert_eq!(check_trivial(&g), Some(true));
        let g = GVass { dim: 1, components: vec![rigid_only((0, 0), 1), rigid_only((1, 1), 2)], connectors: vec![ints(&[0])] };
        assert_eq!(check_trivial(&g), Some(false));
        assert_eq!(check_trivial(&single(1, &[], 1, (0, &[0]), (0, &[0]))), None);
    }

    #[test]
    fn normalize_examples() {
        let g = single(1, &[("a", 0, &[1], 0)], 1, (0, &[0]), (0, &[5]));
        assert!(matches!(normalize(&g), Normalized::StronglyConnected(_)));

        let g = single(1, &[("a", 0, &[1], 1)], 2, (0, &[0]), (1, &[1]));
        match normalize(&g) {
            Normalized::Split { component: 0, children, .. } => {
                assert_eq!(children.len(), 1);
                let child = &children[0].1;
                assert_eq!(child.components.len(), 2);
                assert_eq!(child.connectors, vec![ints(&[1])]);
                assert!(validate(child).is_valid());
                assert!(child.components[0].output.is_empty());
                assert_eq!(child.components[1].input_free, BTreeSet::from([0]));
            }
            _ => panic!("expected a split"),
        }

        let g = single(1, &[], 2, (0, &[0]), (1, &[0]));
        assert!(matches!(normalize(&g), Normalized::PrunedInfeasible { component: 0 }));
    }

    #[test]
    fn trimming_drops_dead_states() {
        let g = single(1, &[("a", 0, &[1], 0), ("b", 0, &[0], 1)], 2, (0, &[0]), (0, &[1]));
        match normalize(&g) {
            Normalized::StronglyConnected(t) => {
                assert_eq!(t.components[0].states.len(), 1);
                assert_eq!(t.components[0].arcs.len(), 1);
            }
            _ => panic!("expected trimming only"),
        }
    }

    #[test]
    fn parallel_bridges_give_one_child_each() {
        let g = single(1, &[("a", 0, &[1], 1), ("b", 0, &[2], 1)], 2, (0, &[0]), (1, &[2]));
        match normalize(&g) {
            Normalized::Split { children, .. } => {
                let steps: Vec<_> = children.iter().map(|c| c.0.clone()).collect();
                assert_eq!(steps, vec![Step::Path { arcs: vec![ArcId(0)] }, Step::Path { arcs: vec![ArcId(1)] }]);
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn theta1_arc_refinement_shapes() {
        let g = single(1, &[("a", 0, &[1], 0), ("b", 0, &[-1], 0)], 1, (0, &[0]), (0, &[0]));
        let kids = refine_theta1_arc(&g, 0, ArcId(0), 0);
        assert_eq!(kids.len(), 1);
        assert_eq!(kids[0].1.components.len(), 1);
        assert_eq!(kids[0].1.components[0].arcs.len(), 1);

        let kids = refine_theta1_arc(&g, 0, ArcId(0), 1);
        assert_eq!(kids[1].1.components.len(), 2);
        for (_, k) in &kids {
            assert!(validate(k).is_valid());
            assert!(refines(&k.size(), &g.size()));
        }

        let g = single(1, &[("a", 0, &[1], 0)], 1, (0, &[0]), (0, &[2]));
        let kids = refine_theta1_arc(&g, 0, ArcId(0), 2);
        let g2 = &kids[2].1;
        assert_eq!(g2.components.len(), 3);
        assert!(g2.components.iter().all(|c| c.arcs.is_empty()));
        assert!(validate(g2).is_valid());
    }

    #[test]
    fn theta1_coord_refinement_values() {
        let mut g = single(1, &[("a", 0, &[1], 0)], 1, (0, &[0]), (0, &[0]));
        g.components[0].output = PartialVector::new();
        g.components[0].output_free.insert(0);
        let kids = refine_theta1_coord(&g, 0, Side::Out, 0, 2);
        let values: Vec<_> = kids.iter().map(|(_, k)| k.components[0].output.get(0).cloned().unwrap()).collect();
        assert_eq!(values, ints(&[0, 1, 2]));
        for (_, k) in &kids {
            assert!(validate(k).is_valid());
            assert_eq!(k.size().triples(), &[SizeTriple::new(1, 1, 0)]);
        }
    }

    #[test]
    fn theta2_constrained_refinement_shape() {
        let g = single(1, &[("a", 0, &[1], 0), ("b", 0, &[-1], 0)], 2, (0, &[0]), (0, &[1]));
        let g = GVass { components: vec![trim(&g.components[0]).unwrap()], ..g };
        let kids = refine_theta2(&g, 0, Direction::Forward, 1);
        assert_eq!(kids.len(), 1);
        let child = &kids[0].1;
        assert!(validate(child).is_valid());
        let (tracked, stub) = (&child.components[0], &child.components[1]);
        assert_eq!(tracked.states.len(), 2);
        assert_eq!(tracked.arcs.len(), 2);
        assert_eq!(stub.rigid.get(0), Some(&BigInt::from(1)));
        assert!(stub.arcs.is_empty());
        assert_eq!(child.connectors, vec![ints(&[1])]);
        assert!(refines(&child.size(), &g.size()));
    }

    #[test]
    fn theta2_unconstrained_refinement_values() {
        let mut g = single(1, &[("a", 0, &[1], 0)], 1, (0, &[0]), (0, &[0]));
        g.components[0].output = PartialVector::new();
        g.components[0].output_free.insert(0);
        let kids = refine_theta2(&g, 0, Direction::Forward, 2);
        assert_eq!(kids.len(), 3);
        assert_eq!(kids[2].0, Step::Fix { side: Side::Out, coord: 0, value: 2 });
    }

    #[test]
    fn named_instances() {
        assert_eq!(answer(&single(1, &[("a", 0, &[2], 0)], 1, (0, &[0]), (0, &[1]))), Answer::Unreachable);
        assert_eq!(answer(&single(1, &[("a", 0, &[1], 0)], 1, (0, &[0]), (0, &[5]))), Answer::Reachable);
        assert_eq!(
            answer(&single(2, &[("a", 0, &[1, 1], 0), ("b", 0, &[-2, 0], 0)], 1, (0, &[0, 0]), (0, &[0, 2]))),
            Answer::Reachable
        );
    }

    #[test]
    fn small_instances() {
        // decrement below zero
        assert_eq!(answer(&single(1, &[("a", 0, &[-1], 0)], 1, (0, &[0]), (0, &[0]))), Answer::Reachable);
        assert_eq!(answer(&single(1, &[("a", 0, &[-1], 0)], 1, (0, &[1]), (0, &[3]))), Answer::Unreachable);
        // transfer with a guard on the other counter
        let g = single(2, &[("a", 0, &[-1, 1], 0), ("b", 0, &[1, -1], 0)], 1, (0, &[1, 0]), (0, &[0, 1]));
        assert_eq!(answer(&g), Answer::Reachable);
        let g = single(2, &[("a", 0, &[-1, 1], 0), ("b", 0, &[1, -1], 0)], 1, (0, &[1, 0]), (0, &[1, 1]));
        assert_eq!(answer(&g), Answer::Unreachable);
        // two states
        let g = single(1, &[("a", 0, &[1], 1), ("b", 1, &[-2], 0)], 2, (0, &[3]), (0, &[2]));
        assert_eq!(answer(&g), Answer::Reachable);
    }

    #[test]
    fn parallel_tree_matches_sequential() {
        let g = single(2, &[("a", 0, &[1, 1], 0), ("b", 0, &[-2, 0], 0), ("c", 0, &[0, -1], 0)], 1, (0, &[0, 0]), (0, &[1, 0]));
        let seq = decide(&g, &DecideConfig::default()).unwrap();
        let par = decide(&g, &DecideConfig { jobs: 4, ..DecideConfig::default() }).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn node_budget_exhausts() {
        let g = single(1, &[("a", 0, &[1], 0)], 1, (0, &[0]), (0, &[5]));
        let d = decide(&g, &DecideConfig { node_budget: 1, ..DecideConfig::default() }).unwrap();
        assert_eq!(d.answer, Answer::ResourceExhausted);
    }

    #[test]
    fn invalid_input_is_rejected() {
        let mut g = single(1, &[("a", 0, &[2], 0)], 1, (0, &[0]), (0, &[1]));
        g.components[0].input_free.insert(0);
        assert!(matches!(decide(&g, &DecideConfig::default()), Err(DecideError::Invalid(_))));
    }
}
