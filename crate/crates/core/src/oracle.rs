//! Bounded explicit-state search and a seeded instance generator.
//!
//! The search is independent of the decider and is used to cross-check it.
//! It explores every configuration whose counters stay inside `[0, bound]`
//! and answers with three values: a shortest witness, a proof that the box
//! closed without any transition leaving it, or `Unknown`.

use std::collections::{BTreeSet, HashMap, VecDeque};

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coverability::ProjectedVass;
use crate::model::{Arc, ArcId, Component, GVass, PartialVector, StateId};

/// A concrete run through a GVASS: the start vector and the arcs used in
/// each component. Connecting arcs are implied between segments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    #[serde(serialize_with = "crate::trace::ser_bigints")]
    pub start: Vec<BigInt>,
    pub segments: Vec<Vec<ArcId>>,
}

impl Witness {
    /// Number of steps, connecting arcs included.
    pub fn len(&self) -> usize {
        self.segments.iter().map(Vec::len).sum::<usize>() + self.segments.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Arc names, with `|` marking connecting arcs.
    pub fn describe(&self, g: &GVass) -> String {
        let mut words = Vec::new();
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                words.push("|".to_string());
            }
            words.extend(seg.iter().map(|a| g.components[i].arcs[a.0].name.clone()));
        }
        words.join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownReason {
    /// Some transition would have left the box.
    Clipped,
    NodeBudget,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleVerdict {
    Yes(Witness),
    No,
    Unknown(UnknownReason),
}

impl OracleVerdict {
    pub fn is_conclusive(&self) -> bool {
        !matches!(self, OracleVerdict::Unknown(_))
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            OracleVerdict::Yes(_) => Some(true),
            OracleVerdict::No => Some(false),
            OracleVerdict::Unknown(_) => None,
        }
    }
}

fn small(n: &BigInt) -> i64 {
    const CAP: i64 = 1 << 62;
    n.to_i64().map_or(if n.is_negative() { -CAP } else { CAP }, |x| x.clamp(-CAP, CAP))
}

fn smalls(v: &[BigInt]) -> Vec<i64> {
    v.iter().map(small).collect()
}

fn agrees(p: &PartialVector, v: &[i64]) -> bool {
    p.iter().all(|(c, x)| small(x) == v[c])
}

type Config = (usize, usize, Vec<i64>);
/// A configuration with its parent index and the arc taken (None for a
/// connecting arc).
type Visited = (Config, Option<(usize, Option<usize>)>);

/// Breadth-first reachability over configurations with counters in
/// `[0, bound]`.
///
/// A nonempty `U_1` means starts outside the box are never tried, so such
/// instances can only answer `Yes` or `Unknown`.
pub fn bfs_reach(g: &GVass, bound: u64, node_budget: usize) -> OracleVerdict {
    let d = g.dim;
    let bound = bound.min(i64::MAX as u64 >> 2) as i64;
    let comps = &g.components;
    let l = comps.len();
    let effects: Vec<Vec<Vec<i64>>> = comps.iter().map(|c| c.arcs.iter().map(|a| smalls(&a.effect)).collect()).collect();
    let connectors: Vec<Vec<i64>> = g.connectors.iter().map(|z| smalls(z)).collect();
    let out: Vec<Vec<Vec<usize>>> = comps
        .iter()
        .map(|c| {
            let mut out = vec![Vec::new(); c.states.len()];
            for (k, a) in c.arcs.iter().enumerate() {
                out[a.source.0].push(k);
            }
            out
        })
        .collect();

    let mut clipped = !comps[0].input_free.is_empty();
    let mut index: HashMap<Config, usize> = HashMap::new();
    let mut nodes: Vec<Visited> = Vec::new();
    let mut queue = VecDeque::new();

    let mut fixed = vec![0i64; d];
    let mut in_box = true;
    for (c, x) in comps[0].rigid.iter().chain(comps[0].input.iter()) {
        fixed[c] = small(x);
        in_box &= (0..=bound).contains(&fixed[c]);
    }
    if !in_box {
        return OracleVerdict::Unknown(UnknownReason::Clipped);
    }
    let free: Vec<usize> = comps[0].input_free.iter().copied().collect();
    let mut odometer = vec![0i64; free.len()];
    loop {
        let mut v = fixed.clone();
        for (&c, &x) in free.iter().zip(&odometer) {
            v[c] = x;
        }
        let cfg = (0, comps[0].initial.0, v);
        if !index.contains_key(&cfg) {
            if nodes.len() >= node_budget {
                return OracleVerdict::Unknown(UnknownReason::NodeBudget);
            }
            index.insert(cfg.clone(), nodes.len());
            queue.push_back(nodes.len());
            nodes.push((cfg, None));
        }
        let Some(k) = odometer.iter().position(|&x| x < bound) else { break };
        odometer[k] += 1;
        odometer[..k].iter_mut().for_each(|x| *x = 0);
    }

    let accepting = |i: usize, s: usize, v: &[i64]| {
        let c = &comps[i];
        s == c.final_state.0 && agrees(&c.rigid, v) && agrees(&c.output, v)
    };

    while let Some(n) = queue.pop_front() {
        let (i, s, v) = nodes[n].0.clone();
        let mut successors: Vec<(Config, Option<usize>)> = Vec::new();
        for &k in &out[i][s] {
            let next: Vec<i64> = v.iter().zip(&effects[i][k]).map(|(x, z)| x + z).collect();
            successors.push(((i, comps[i].arcs[k].target.0, next), Some(k)));
        }
        if accepting(i, s, &v) {
            if i + 1 == l {
                return OracleVerdict::Yes(rebuild(g, &nodes, n));
            }
            let next: Vec<i64> = v.iter().zip(&connectors[i]).map(|(x, z)| x + z).collect();
            let c = &comps[i + 1];
            if agrees(&c.rigid, &next) && agrees(&c.input, &next) {
                successors.push(((i + 1, c.initial.0, next), None));
            }
        }
        for (cfg, arc) in successors {
            if cfg.2.iter().any(|&x| x < 0) {
                continue;
            }
            if cfg.2.iter().any(|&x| x > bound) {
                clipped = true;
                continue;
            }
            if index.contains_key(&cfg) {
                continue;
            }
            if nodes.len() >= node_budget {
                return OracleVerdict::Unknown(UnknownReason::NodeBudget);
            }
            index.insert(cfg.clone(), nodes.len());
            queue.push_back(nodes.len());
            nodes.push((cfg, Some((n, arc))));
        }
    }
    if clipped {
        OracleVerdict::Unknown(UnknownReason::Clipped)
    } else {
        OracleVerdict::No
    }
}

fn rebuild(g: &GVass, nodes: &[Visited], end: usize) -> Witness {
    let mut segments = vec![Vec::new(); g.components.len()];
    let mut at = end;
    while let Some((parent, arc)) = nodes[at].1 {
        if let Some(k) = arc {
            segments[nodes[at].0 .0].push(ArcId(k));
        }
        at = parent;
    }
    segments.iter_mut().for_each(|s| s.reverse());
    Witness { start: nodes[at].0 .2.iter().map(|&x| BigInt::from(x)).collect(), segments }
}

/// Replays a witness with exact arithmetic and checks every condition of a
/// GVASS run.
pub fn check_witness(g: &GVass, w: &Witness) -> bool {
    if w.start.len() != g.dim || w.segments.len() != g.components.len() {
        return false;
    }
    let mut v = w.start.clone();
    if v.iter().any(Signed::is_negative) {
        return false;
    }
    for (i, (comp, seg)) in g.components.iter().zip(&w.segments).enumerate() {
        if i > 0 {
            for (x, z) in v.iter_mut().zip(&g.connectors[i - 1]) {
                *x += z;
            }
            if v.iter().any(Signed::is_negative) {
                return false;
            }
        }
        if !comp.rigid.agrees_with(&v) || !comp.input.agrees_with(&v) {
            return false;
        }
        let mut state = comp.initial;
        for a in seg {
            let Some(arc) = comp.arcs.get(a.0) else { return false };
            if arc.source != state {
                return false;
            }
            for (x, z) in v.iter_mut().zip(&arc.effect) {
                *x += z;
            }
            if v.iter().any(Signed::is_negative) {
                return false;
            }
            state = arc.target;
        }
        if state != comp.final_state || !comp.rigid.agrees_with(&v) || !comp.output.agrees_with(&v) {
            return false;
        }
    }
    true
}

/// Searches boxes of growing size for a witness. Each search gets
/// `node_budget` nodes; gives up when one runs out or a box closes.
pub fn find_witness(g: &GVass, node_budget: usize) -> Option<Witness> {
    let mut bound = 4u64;
    loop {
        match bfs_reach(g, bound, node_budget) {
            OracleVerdict::Yes(w) => return Some(w),
            OracleVerdict::Unknown(UnknownReason::Clipped) if bound < 1 << 40 => bound *= 2,
            _ => return None,
        }
    }
}

/// Three-valued answer of a box-bounded search on a plain VASS.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxVerdict {
    Yes,
    No,
    Unknown,
}

/// Whether `(state, ≥ target)` is reachable from `(init_state, init)`,
/// exploring markings in `[0, bound]` only.
pub fn bfs_cover(
    vass: &ProjectedVass,
    init_state: usize,
    init: &[BigInt],
    state: usize,
    target: &[BigInt],
    bound: u64,
    node_budget: usize,
) -> BoxVerdict {
    let bound = bound.min(i64::MAX as u64 >> 2) as i64;
    let target = smalls(target);
    let init = smalls(init);
    if init.iter().any(|&x| x > bound) {
        return BoxVerdict::Unknown;
    }
    let effects: Vec<Vec<i64>> = vass.arcs.iter().map(|a| smalls(&a.effect)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert((init_state, init.clone()));
    queue.push_back((init_state, init));
    let mut clipped = false;
    while let Some((s, v)) = queue.pop_front() {
        if s == state && v.iter().zip(&target).all(|(x, t)| x >= t) {
            return BoxVerdict::Yes;
        }
        for (a, z) in vass.arcs.iter().zip(&effects) {
            if a.source != s {
                continue;
            }
            let next: Vec<i64> = v.iter().zip(z).map(|(x, z)| x + z).collect();
            if next.iter().any(|&x| x < 0) {
                continue;
            }
            if next.iter().any(|&x| x > bound) {
                clipped = true;
                continue;
            }
            if seen.len() >= node_budget {
                return BoxVerdict::Unknown;
            }
            if seen.insert((a.target, next.clone())) {
                queue.push_back((a.target, next));
            }
        }
    }
    if clipped {
        BoxVerdict::Unknown
    } else {
        BoxVerdict::No
    }
}

/// Parameters for [`generate`]. Counts are per component.
#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub dim: usize,
    pub states: usize,
    pub arcs: usize,
    pub effect_bound: i64,
    pub value_bound: u64,
    pub components: usize,
    pub unconstrained_prob: f64,
    pub rigid_prob: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            dim: 2,
            states: 2,
            arcs: 3,
            effect_bound: 2,
            value_bound: 3,
            components: 1,
            unconstrained_prob: 0.0,
            rigid_prob: 0.0,
            seed: 0,
        }
    }
}

/// A pseudo-random valid GVASS, fully determined by `params`.
pub fn generate(params: &GenParams) -> GVass {
    assert!(params.dim > 0 && params.states > 0 && params.components > 0, "generator bounds must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let d = params.dim;
    let components = (0..params.components)
        .map(|i| {
            let mut rigid = PartialVector::new();
            let mut input = PartialVector::new();
            let mut output = PartialVector::new();
            let mut input_free = BTreeSet::new();
            let mut output_free = BTreeSet::new();
            for c in 0..d {
                if rng.gen_bool(params.rigid_prob) {
                    rigid.insert(c, BigInt::from(rng.gen_range(0..=params.value_bound)));
                    continue;
                }
                if rng.gen_bool(params.unconstrained_prob) {
                    input_free.insert(c);
                } else {
                    input.insert(c, BigInt::from(rng.gen_range(0..=params.value_bound)));
                }
                if rng.gen_bool(params.unconstrained_prob) {
                    output_free.insert(c);
                } else {
                    output.insert(c, BigInt::from(rng.gen_range(0..=params.value_bound)));
                }
            }
            let arcs = (0..params.arcs)
                .map(|k| {
                    let source = StateId(rng.gen_range(0..params.states));
                    let target = StateId(rng.gen_range(0..params.states));
                    let effect = (0..d)
                        .map(|c| {
                            if rigid.contains(c) {
                                BigInt::zero()
                            } else {
                                BigInt::from(rng.gen_range(-params.effect_bound..=params.effect_bound))
                            }
                        })
                        .collect();
                    Arc::new(format!("a{k}"), source, effect, target)
                })
                .collect();
            Component {
                name: format!("c{i}"),
                states: (0..params.states).map(|s| format!("q{s}")).collect(),
                arcs,
                initial: StateId(0),
                final_state: StateId(rng.gen_range(0..params.states)),
                rigid,
                input,
                input_free,
                output,
                output_free,
            }
        })
        .collect();
    let connectors = (1..params.components)
        .map(|_| (0..d).map(|_| BigInt::from(rng.gen_range(-params.effect_bound..=params.effect_bound))).collect())
        .collect();
    GVass { dim: d, components, connectors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ints, validate};

    pub(crate) fn one_state(dim: usize, arcs: &[(&str, &[i64])], from: &[i64], to: &[i64]) -> GVass {
        let all: BTreeSet<usize> = (0..dim).collect();
        GVass {
            dim,
            components: vec![Component {
                name: "v".into(),
                states: vec!["q".into()],
                arcs: arcs.iter().map(|(n, z)| Arc::new(*n, StateId(0), ints(z), StateId(0))).collect(),
                initial: StateId(0),
                final_state: StateId(0),
                rigid: PartialVector::new(),
                input: PartialVector::from_full(&ints(from), &all),
                input_free: BTreeSet::new(),
                output: PartialVector::from_full(&ints(to), &all),
                output_free: BTreeSet::new(),
            }],
            connectors: vec![],
        }
    }

    #[test]
    fn parity_instance_clips() {
        let g = one_state(1, &[("a", &[2])], &[0], &[1]);
        assert_eq!(bfs_reach(&g, 11, 1_000_000), OracleVerdict::Unknown(UnknownReason::Clipped));
    }

    #[test]
    fn growing_boxes() {
        let g = one_state(1, &[("a", &[7])], &[0], &[35]);
        let w = find_witness(&g, 1_000).unwrap();
        assert_eq!(w.len(), 5);
        assert!(find_witness(&one_state(1, &[("a", &[2])], &[0], &[1]), 1_000).is_none());
    }

    #[test]
    fn plus_one_loop_has_length_five_witness() {
        let g = one_state(1, &[("a", &[1])], &[0], &[5]);
        match bfs_reach(&g, 10, 1_000_000) {
            OracleVerdict::Yes(w) => {
                assert_eq!(w.len(), 5);
                assert!(check_witness(&g, &w));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_arc_instance_witness_is_a_a_b() {
        let g = one_state(2, &[("a", &[1, 1]), ("b", &[-2, 0])], &[0, 0], &[0, 2]);
        match bfs_reach(&g, 50, 1_000_000) {
            OracleVerdict::Yes(w) => {
                assert_eq!(w.describe(&g), "a a b");
                assert!(check_witness(&g, &w));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn closed_box_answers_no() {
        let g = one_state(2, &[("a", &[-1, 1]), ("b", &[1, -1])], &[1, 0], &[2, 0]);
        assert_eq!(bfs_reach(&g, 5, 1000), OracleVerdict::No);
        assert_eq!(bfs_reach(&g, 5, 1), OracleVerdict::Unknown(UnknownReason::NodeBudget));
    }

    #[test]
    fn check_witness_rejects_bad_runs() {
        let g = one_state(2, &[("a", &[1, 1]), ("b", &[-2, 0])], &[0, 0], &[0, 2]);
        let w = |seg: &[usize]| Witness { start: ints(&[0, 0]), segments: vec![seg.iter().map(|&k| ArcId(k)).collect()] };
        assert!(check_witness(&g, &w(&[0, 0, 1])));
        assert!(!check_witness(&g, &w(&[1, 0, 0])));
        assert!(!check_witness(&g, &w(&[0, 0])));
        assert!(!check_witness(&g, &w(&[0, 0, 9])));
    }

    fn chain(from: i64, step: i64, to: i64) -> Component {
        Component {
            name: "c".into(),
            states: vec!["q".into(), "p".into()],
            arcs: vec![Arc::new("a", StateId(0), ints(&[step]), StateId(1))],
            initial: StateId(0),
            final_state: StateId(1),
            rigid: PartialVector::new(),
            input: [(0, BigInt::from(from))].into_iter().collect(),
            input_free: BTreeSet::new(),
            output: [(0, BigInt::from(to))].into_iter().collect(),
            output_free: BTreeSet::new(),
        }
    }

    #[test]
    fn multi_component_search_uses_connectors() {
        let mut g = GVass { dim: 1, components: vec![chain(0, 2, 2), chain(5, 1, 6)], connectors: vec![ints(&[3])] };
        match bfs_reach(&g, 10, 10_000) {
            OracleVerdict::Yes(w) => {
                assert_eq!(w.describe(&g), "a | a");
                assert_eq!(w.len(), 3);
                assert!(check_witness(&g, &w));
            }
            other => panic!("{other:?}"),
        }
        g.connectors[0] = ints(&[2]);
        assert_eq!(bfs_reach(&g, 10, 10_000), OracleVerdict::No);
    }

    #[test]
    fn free_initial_coordinates_cannot_answer_no() {
        let mut g = GVass { dim: 1, components: vec![chain(0, -30, 0)], connectors: vec![] };
        g.components[0].input = PartialVector::new();
        g.components[0].input_free.insert(0);
        assert_eq!(bfs_reach(&g, 20, 10_000), OracleVerdict::Unknown(UnknownReason::Clipped));
        match bfs_reach(&g, 40, 10_000) {
            OracleVerdict::Yes(w) => assert_eq!(w.start, ints(&[30])),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        let p = GenParams { seed: 1, dim: 2, states: 2, arcs: 3, ..GenParams::default() };
        assert_eq!(generate(&p), generate(&p));
        for seed in 0..200 {
            let p = GenParams { seed, components: 2, unconstrained_prob: 0.3, rigid_prob: 0.3, ..GenParams::default() };
            assert!(validate(&generate(&p)).is_valid(), "seed {seed}");
        }
    }

    #[test]
    fn generator_extremes() {
        let g = generate(&GenParams { rigid_prob: 1.0, seed: 3, ..GenParams::default() });
        let c = &g.components[0];
        assert_eq!(c.rigid.len(), 2);
        assert!(c.arcs.iter().all(|a| a.effect.iter().all(Zero::is_zero)));
        let g = generate(&GenParams { unconstrained_prob: 0.0, seed: 4, ..GenParams::default() });
        assert!(g.components.iter().all(|c| c.input_free.is_empty() && c.output_free.is_empty()));
    }
}
