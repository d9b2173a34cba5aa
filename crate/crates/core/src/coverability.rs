//! Karp–Miller trees and the Θ2 pumping test.
//!
//! Θ2 asks whether a component can pump all its initial constrained
//! coordinates up while returning to its initial state (forward), and all
//! final constrained coordinates up against the arrow at its final state
//! (backward). Only the constrained coordinates must stay nonnegative, so
//! both directions reduce to coverability in the projection onto those
//! coordinates.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::model::{ArcId, Component, Coord, StateId};

/// A natural number or ω.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ExtNat {
    Finite(BigInt),
    Omega,
}

impl ExtNat {
    pub fn is_omega(&self) -> bool {
        matches!(self, ExtNat::Omega)
    }

    pub fn finite(&self) -> Option<&BigInt> {
        match self {
            ExtNat::Finite(n) => Some(n),
            ExtNat::Omega => None,
        }
    }

    /// `self + z`; ω absorbs.
    pub fn shift(&self, z: &BigInt) -> ExtNat {
        match self {
            ExtNat::Finite(n) => ExtNat::Finite(n + z),
            ExtNat::Omega => ExtNat::Omega,
        }
    }

    /// `self ≥ n` for a finite `n`.
    pub fn at_least(&self, n: &BigInt) -> bool {
        match self {
            ExtNat::Finite(m) => m >= n,
            ExtNat::Omega => true,
        }
    }
}

impl From<BigInt> for ExtNat {
    fn from(n: BigInt) -> Self {
        ExtNat::Finite(n)
    }
}

impl PartialOrd for ExtNat {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtNat {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ExtNat::Finite(a), ExtNat::Finite(b)) => a.cmp(b),
            (ExtNat::Finite(_), ExtNat::Omega) => Ordering::Less,
            (ExtNat::Omega, ExtNat::Finite(_)) => Ordering::Greater,
            (ExtNat::Omega, ExtNat::Omega) => Ordering::Equal,
        }
    }
}

impl fmt::Display for ExtNat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtNat::Finite(n) => write!(f, "{n}"),
            ExtNat::Omega => write!(f, "ω"),
        }
    }
}

impl Serialize for ExtNat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

fn leq(a: &[ExtNat], b: &[ExtNat]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Backward,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectedArc {
    pub source: usize,
    pub target: usize,
    pub effect: Vec<BigInt>,
    /// Arc of the component this one was projected from.
    pub origin: ArcId,
}

/// A plain VASS on a subset of the coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectedVass {
    pub states: usize,
    /// Original coordinate of each projected dimension.
    pub coords: Vec<Coord>,
    pub arcs: Vec<ProjectedArc>,
}

impl ProjectedVass {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoverError {
    #[error("arc {arc} has a nonzero effect on rigid coordinate {coord}")]
    RigidTouched { arc: ArcId, coord: Coord },
    #[error("coverability tree exceeded {budget} nodes")]
    Budget { budget: usize, partial: Box<KmTree> },
}

/// Projects a component onto its initial constrained coordinates
/// (forward), or onto its final constrained coordinates with arcs reversed
/// and effects negated (backward).
pub fn project(comp: &Component, direction: Direction) -> Result<ProjectedVass, CoverError> {
    for (k, arc) in comp.arcs.iter().enumerate() {
        for (c, _) in comp.rigid.iter() {
            if arc.effect.get(c).is_some_and(|z| !z.is_zero()) {
                return Err(CoverError::RigidTouched { arc: ArcId(k), coord: c });
            }
        }
    }
    let coords: Vec<Coord> = match direction {
        Direction::Forward => comp.input.coords().into_iter().collect(),
        Direction::Backward => comp.output.coords().into_iter().collect(),
    };
    let arcs = comp
        .arcs
        .iter()
        .enumerate()
        .map(|(k, arc)| {
            let effect: Vec<BigInt> = coords.iter().map(|&c| arc.effect[c].clone()).collect();
            match direction {
                Direction::Forward => ProjectedArc { source: arc.source.0, target: arc.target.0, effect, origin: ArcId(k) },
                Direction::Backward => ProjectedArc {
                    source: arc.target.0,
                    target: arc.source.0,
                    effect: effect.into_iter().map(|z| -z).collect(),
                    origin: ArcId(k),
                },
            }
        })
        .collect();
    Ok(ProjectedVass { states: comp.states.len(), coords, arcs })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KmNode {
    pub state: usize,
    pub marking: Vec<ExtNat>,
    pub parent: Option<usize>,
    /// Projected arc leading here from the parent.
    pub arc: Option<usize>,
    /// False for leaves cut because an ancestor with the same state
    /// dominates them.
    pub expanded: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KmTree {
    pub nodes: Vec<KmNode>,
}

impl KmTree {
    /// Some node at `state` has a marking `≥ target`.
    pub fn covers(&self, state: usize, target: &[BigInt]) -> bool {
        self.covering_node(state, target).is_some()
    }

    pub fn covering_node(&self, state: usize, target: &[BigInt]) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.state == state && n.marking.iter().zip(target).all(|(m, t)| m.at_least(t)))
    }

    /// Largest finite entry over all markings.
    pub fn max_finite(&self) -> BigInt {
        self.nodes
            .iter()
            .flat_map(|n| n.marking.iter().filter_map(ExtNat::finite))
            .max()
            .cloned()
            .unwrap_or_else(BigInt::zero)
    }

    /// Projected arcs from the root to `node`.
    pub fn path_to(&self, node: usize) -> Vec<usize> {
        let mut out = vec![];
        let mut at = node;
        while let Some(p) = self.nodes[at].parent {
            out.push(self.nodes[at].arc.expect("non-root node has an arc"));
            at = p;
        }
        out.reverse();
        out
    }

    fn ancestors(&self, node: usize) -> impl Iterator<Item = &KmNode> {
        std::iter::successors(Some(node), move |&n| self.nodes[n].parent).map(move |n| &self.nodes[n])
    }
}

/// Karp–Miller coverability tree, expanded depth first.
///
/// A successor that strictly dominates an ancestor with the same state gets
/// ω on every strictly larger coordinate. A successor dominated by an
/// ancestor with the same state becomes an unexpanded leaf.
pub fn karp_miller(vass: &ProjectedVass, state: usize, init: &[BigInt], budget: usize) -> Result<KmTree, CoverError> {
    assert_eq!(init.len(), vass.dim(), "initial marking has wrong dimension");
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); vass.states];
    for (k, a) in vass.arcs.iter().enumerate() {
        out[a.source].push(k);
    }
    let mut tree = KmTree {
        nodes: vec![KmNode {
            state,
            marking: init.iter().cloned().map(ExtNat::Finite).collect(),
            parent: None,
            arc: None,
            expanded: true,
        }],
    };
    let mut stack = vec![0usize];
    while let Some(n) = stack.pop() {
        let from = tree.nodes[n].state;
        let mut children = Vec::new();
        for &k in &out[from] {
            let arc = &vass.arcs[k];
            let mut marking: Vec<ExtNat> =
                tree.nodes[n].marking.iter().zip(&arc.effect).map(|(m, z)| m.shift(z)).collect();
            if marking.iter().any(|m| m.finite().is_some_and(Signed::is_negative)) {
                continue;
            }
            loop {
                let mut changed = false;
                for anc in tree.ancestors(n) {
                    if anc.state == arc.target && leq(&anc.marking, &marking) && anc.marking != marking {
                        for (m, a) in marking.iter_mut().zip(&anc.marking) {
                            if a < m && !m.is_omega() {
                                *m = ExtNat::Omega;
                                changed = true;
                            }
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            let covered = tree.ancestors(n).any(|anc| anc.state == arc.target && leq(&marking, &anc.marking));
            children.push(KmNode { state: arc.target, marking, parent: Some(n), arc: Some(k), expanded: !covered });
        }
        let first = tree.nodes.len();
        tree.nodes.extend(children);
        if tree.nodes.len() > budget {
            return Err(CoverError::Budget { budget, partial: Box::new(tree) });
        }
        for id in (first..tree.nodes.len()).rev() {
            if tree.nodes[id].expanded {
                stack.push(id);
            }
        }
    }
    Ok(tree)
}

/// Evidence that one direction of Θ2 holds for a component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Theta2Witness {
    pub direction: Direction,
    /// Certified pumping vector over the constrained coordinates; all ones,
    /// since a covering node only certifies that some `Δ ≥ 1` exists.
    #[serde(serialize_with = "crate::trace::ser_bigints")]
    pub delta: Vec<BigInt>,
    /// Marking of the covering tree node.
    pub marking: Vec<ExtNat>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum Theta2Outcome {
    Holds(Theta2Witness),
    /// Every run keeps some constrained coordinate at or below `bound`.
    Fails {
        #[serde(serialize_with = "crate::trace::ser_bigint")]
        bound: BigInt,
    },
}

/// One direction of Θ2 for a single component.
pub fn theta2_direction(comp: &Component, direction: Direction, km_budget: usize) -> Result<Theta2Outcome, CoverError> {
    let vass = project(comp, direction)?;
    if vass.dim() == 0 {
        return Ok(Theta2Outcome::Holds(Theta2Witness { direction, delta: vec![], marking: vec![] }));
    }
    let (state, values) = match direction {
        Direction::Forward => (comp.initial, &comp.input),
        Direction::Backward => (comp.final_state, &comp.output),
    };
    let init: Vec<BigInt> = vass.coords.iter().map(|&c| values.get(c).expect("projected coordinate").clone()).collect();
    let tree = karp_miller(&vass, state.0, &init, km_budget)?;
    let target: Vec<BigInt> = init.iter().map(|v| v + 1).collect();
    Ok(match tree.covering_node(state.0, &target) {
        Some(node) => Theta2Outcome::Holds(Theta2Witness {
            direction,
            delta: vec![BigInt::one(); vass.dim()],
            marking: tree.nodes[node].marking.clone(),
        }),
        None => Theta2Outcome::Fails { bound: tree.max_finite() },
    })
}

/// First Θ2 failure in the fixed order (components ascending, forward
/// before backward), or the witnesses of every check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Theta2Check {
    Holds(Vec<[Theta2Witness; 2]>),
    Fails { component: usize, direction: Direction, bound: BigInt },
}

pub fn theta2(components: &[Component], km_budget: usize) -> Result<Theta2Check, CoverError> {
    let mut witnesses = Vec::with_capacity(components.len());
    for (i, comp) in components.iter().enumerate() {
        let mut pair = Vec::with_capacity(2);
        for direction in [Direction::Forward, Direction::Backward] {
            match theta2_direction(comp, direction, km_budget)? {
                Theta2Outcome::Holds(w) => pair.push(w),
                Theta2Outcome::Fails { bound } => return Ok(Theta2Check::Fails { component: i, direction, bound }),
            }
        }
        let [f, b]: [Theta2Witness; 2] = pair.try_into().expect("two directions");
        witnesses.push([f, b]);
    }
    Ok(Theta2Check::Holds(witnesses))
}

/// The component's state that Θ2 pumps at in the given direction.
pub fn anchor(comp: &Component, direction: Direction) -> StateId {
    match direction {
        Direction::Forward => comp.initial,
        Direction::Backward => comp.final_state,
    }
}
