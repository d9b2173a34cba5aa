//! Domain types for generalized VASS instances.
//!
//! A [`GVass`] is a chain of [`Component`]s joined by connecting arcs. Each
//! component is a plain VASS over the shared dimension together with boundary
//! data: rigid coordinates (untouched by the component's arcs, pinned to a
//! value), constrained coordinates (boundary value given) and unconstrained
//! coordinates (boundary value existentially quantified over the naturals).
//!
//! Coordinates, states and arcs are dense 0-based indices. All counter values
//! and effects are arbitrary-precision integers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde::Serialize;
use thiserror::Error;

/// Index of a coordinate in `0..dim`.
pub type Coord = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct StateId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ArcId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for ArcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("arc {arc} does not start in state {expected} (run is not chained)")]
    BrokenChain { arc: ArcId, expected: StateId },
    #[error("arc {0} is not an arc of the component")]
    UnknownArc(ArcId),
    #[error("coordinate sets overlap on coordinate {0}")]
    OverlappingGlue(Coord),
    #[error("vector has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("vector has negative entry {value} at coordinate {coord}")]
    Negative { coord: Coord, value: BigInt },
}

/// A vector defined on a subset of the coordinates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PartialVector(BTreeMap<Coord, BigInt>);

impl PartialVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero vector on the given coordinates.
    pub fn zeros<I: IntoIterator<Item = Coord>>(coords: I) -> Self {
        Self(coords.into_iter().map(|c| (c, BigInt::zero())).collect())
    }

    /// Restriction of a full vector to `coords`.
    pub fn from_full<'a, I: IntoIterator<Item = &'a Coord>>(full: &[BigInt], coords: I) -> Self {
        Self(coords.into_iter().map(|&c| (c, full[c].clone())).collect())
    }

    pub fn insert(&mut self, coord: Coord, value: BigInt) -> Option<BigInt> {
        self.0.insert(coord, value)
    }

    pub fn remove(&mut self, coord: Coord) -> Option<BigInt> {
        self.0.remove(&coord)
    }

    pub fn get(&self, coord: Coord) -> Option<&BigInt> {
        self.0.get(&coord)
    }

    pub fn contains(&self, coord: Coord) -> bool {
        self.0.contains_key(&coord)
    }

    pub fn coords(&self) -> BTreeSet<Coord> {
        self.0.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Coord, &BigInt)> {
        self.0.iter().map(|(&c, v)| (c, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Glues two vectors over disjoint coordinate sets.
    pub fn glue(&self, other: &PartialVector) -> Result<PartialVector, ModelError> {
        let mut out = self.0.clone();
        for (c, v) in other.iter() {
            if out.insert(c, v.clone()).is_some() {
                return Err(ModelError::OverlappingGlue(c));
            }
        }
        Ok(PartialVector(out))
    }

    /// Restriction to the coordinates in `coords` that are defined here.
    pub fn restrict(&self, coords: &BTreeSet<Coord>) -> PartialVector {
        PartialVector(
            self.0
                .iter()
                .filter(|(c, _)| coords.contains(c))
                .map(|(&c, v)| (c, v.clone()))
                .collect(),
        )
    }

    /// Writes the defined entries into a full vector.
    pub fn write_into(&self, full: &mut [BigInt]) {
        for (c, v) in self.iter() {
            full[c] = v.clone();
        }
    }

    /// True when `full` agrees with this vector on every defined coordinate.
    pub fn agrees_with(&self, full: &[BigInt]) -> bool {
        self.iter().all(|(c, v)| full.get(c) == Some(v))
    }
}

impl FromIterator<(Coord, BigInt)> for PartialVector {
    fn from_iter<T: IntoIterator<Item = (Coord, BigInt)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Arc {
    pub name: String,
    pub source: StateId,
    pub target: StateId,
    pub effect: Vec<BigInt>,
}

impl Arc {
    pub fn new(name: impl Into<String>, source: StateId, effect: Vec<BigInt>, target: StateId) -> Self {
        Self { name: name.into(), source, target, effect }
    }
}

/// One VASS of a GVASS together with its boundary data.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Component {
    pub name: String,
    pub states: Vec<String>,
    pub arcs: Vec<Arc>,
    pub initial: StateId,
    pub final_state: StateId,
    /// Rigid coordinates `R` and the rigid vector `r`.
    pub rigid: PartialVector,
    /// Initial constrained coordinates `C` and the initial vector `v`.
    pub input: PartialVector,
    /// Initial unconstrained coordinates `U`.
    pub input_free: BTreeSet<Coord>,
    /// Final constrained coordinates `C'` and the final vector `v'`.
    pub output: PartialVector,
    /// Final unconstrained coordinates `U'`.
    pub output_free: BTreeSet<Coord>,
}

impl Component {
    pub fn rigid_coords(&self) -> BTreeSet<Coord> {
        self.rigid.coords()
    }

    pub fn non_rigid(&self, dim: usize) -> BTreeSet<Coord> {
        (0..dim).filter(|c| !self.rigid.contains(*c)).collect()
    }

    pub fn state_index(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s == name).map(StateId)
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.states[s.0]
    }

    pub fn size(&self, dim: usize) -> SizeTriple {
        SizeTriple {
            non_rigid: dim - self.rigid.len().min(dim),
            arc_count: self.arcs.len(),
            unconstrained_count: self.input_free.len() + self.output_free.len(),
        }
    }

    /// Edge list of the underlying multigraph, indexed like `arcs`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.arcs.iter().map(|a| (a.source.0, a.target.0)).collect()
    }
}

/// A generalized VASS: components `V_1 … V_l` joined by `l - 1` connecting
/// arcs from the final state of `V_i` to the initial state of `V_{i+1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GVass {
    pub dim: usize,
    pub components: Vec<Component>,
    pub connectors: Vec<Vec<BigInt>>,
}

impl GVass {
    pub fn size(&self) -> SizeMultiset {
        size_of(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    ZeroDimension,
    NoComponents,
    ConnectorCount,
    VectorLength,
    CoordinateOutOfRange,
    NoStates,
    UnknownState,
    RigidTouched,
    PartitionOverlap,
    PartitionIncomplete,
    NegativeValue,
}

impl ViolationKind {
    pub fn describe(self) -> &'static str {
        match self {
            ViolationKind::ZeroDimension => "dimension must be positive",
            ViolationKind::NoComponents => "no components",
            ViolationKind::ConnectorCount => "connector count mismatch",
            ViolationKind::VectorLength => "vector length mismatch",
            ViolationKind::CoordinateOutOfRange => "coordinate out of range",
            ViolationKind::NoStates => "component has no states",
            ViolationKind::UnknownState => "unknown state",
            ViolationKind::RigidTouched => "rigid coordinate touched",
            ViolationKind::PartitionOverlap => "partition overlap",
            ViolationKind::PartitionIncomplete => "partition incomplete",
            ViolationKind::NegativeValue => "negative value",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Offending component, if the violation is local to one.
    pub component: Option<usize>,
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.component {
            Some(i) => write!(f, "component {i}: {}: {}", self.kind.describe(), self.detail),
            None => write!(f, "{}: {}", self.kind.describe(), self.detail),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, component: Option<usize>, kind: ViolationKind, detail: impl Into<String>) {
        self.violations.push(Violation { component, kind, detail: detail.into() });
    }
}

/// Reports every structural invariant violation of `g`.
pub fn validate(g: &GVass) -> ValidationReport {
    let mut report = ValidationReport::default();
    let d = g.dim;
    if d == 0 {
        report.push(None, ViolationKind::ZeroDimension, "dim = 0");
    }
    if g.components.is_empty() {
        report.push(None, ViolationKind::NoComponents, "a GVASS needs at least one component");
    } else if g.connectors.len() + 1 != g.components.len() {
        report.push(
            None,
            ViolationKind::ConnectorCount,
            format!("{} components but {} connectors", g.components.len(), g.connectors.len()),
        );
    }
    for (k, z) in g.connectors.iter().enumerate() {
        if z.len() != d {
            report.push(None, ViolationKind::VectorLength, format!("connector {k} has length {}", z.len()));
        }
    }
    for (i, comp) in g.components.iter().enumerate() {
        validate_component(i, comp, d, &mut report);
    }
    report
}

fn validate_component(i: usize, comp: &Component, d: usize, report: &mut ValidationReport) {
    let at = Some(i);
    if comp.states.is_empty() {
        report.push(at, ViolationKind::NoStates, "empty state list");
    }
    let n = comp.states.len();
    for (what, s) in [("initial", comp.initial), ("final", comp.final_state)] {
        if s.0 >= n {
            report.push(at, ViolationKind::UnknownState, format!("{what} state {} out of range", s.0));
        }
    }
    for (k, arc) in comp.arcs.iter().enumerate() {
        if arc.source.0 >= n || arc.target.0 >= n {
            report.push(at, ViolationKind::UnknownState, format!("arc {k} ({}) has an endpoint out of range", arc.name));
        }
        if arc.effect.len() != d {
            report.push(at, ViolationKind::VectorLength, format!("arc {k} ({}) has effect length {}", arc.name, arc.effect.len()));
            continue;
        }
        for (c, _) in comp.rigid.iter() {
            if c < d && !arc.effect[c].is_zero() {
                report.push(
                    at,
                    ViolationKind::RigidTouched,
                    format!("arc {k} ({}) has effect {} on rigid coordinate {c}", arc.name, arc.effect[c]),
                );
            }
        }
    }

    let sets: [(&str, BTreeSet<Coord>); 5] = [
        ("rigid", comp.rigid.coords()),
        ("in", comp.input.coords()),
        ("in-unconstrained", comp.input_free.clone()),
        ("out", comp.output.coords()),
        ("out-unconstrained", comp.output_free.clone()),
    ];
    for (name, set) in &sets {
        if let Some(c) = set.iter().find(|&&c| c >= d) {
            report.push(at, ViolationKind::CoordinateOutOfRange, format!("{name} lists coordinate {c} but dim = {d}"));
        }
    }
    // R, C, U partition 0..d and R, C', U' partition 0..d.
    for (left, right) in [(0, 1), (0, 2), (1, 2), (0, 3), (0, 4), (3, 4)] {
        let (ln, ls) = &sets[left];
        let (rn, rs) = &sets[right];
        if let Some(c) = ls.intersection(rs).next() {
            report.push(at, ViolationKind::PartitionOverlap, format!("coordinate {c} is both {ln} and {rn}"));
        }
    }
    for (side, a, b) in [("initial", 1, 2), ("final", 3, 4)] {
        let covered: BTreeSet<Coord> = sets[0].1.iter().chain(&sets[a].1).chain(&sets[b].1).copied().collect();
        if let Some(c) = (0..d).find(|c| !covered.contains(c)) {
            report.push(at, ViolationKind::PartitionIncomplete, format!("coordinate {c} is not classified on the {side} side"));
        }
    }
    for (name, vec) in [("rigid", &comp.rigid), ("in", &comp.input), ("out", &comp.output)] {
        for (c, v) in vec.iter() {
            if v.is_negative() {
                report.push(at, ViolationKind::NegativeValue, format!("{name} value {v} on coordinate {c}"));
            }
        }
    }
}

/// Size of a component: non-rigid coordinates, arcs, unconstrained
/// coordinates. The derived order is lexicographic in that field order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SizeTriple {
    pub non_rigid: usize,
    pub arc_count: usize,
    pub unconstrained_count: usize,
}

impl SizeTriple {
    pub const ZERO: SizeTriple = SizeTriple { non_rigid: 0, arc_count: 0, unconstrained_count: 0 };

    pub fn new(non_rigid: usize, arc_count: usize, unconstrained_count: usize) -> Self {
        Self { non_rigid, arc_count, unconstrained_count }
    }
}

impl fmt::Display for SizeTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.non_rigid, self.arc_count, self.unconstrained_count)
    }
}

/// Multiset of size triples, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct SizeMultiset(Vec<SizeTriple>);

impl SizeMultiset {
    pub fn new(mut triples: Vec<SizeTriple>) -> Self {
        triples.sort();
        Self(triples)
    }

    pub fn triples(&self) -> &[SizeTriple] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_trivial(&self) -> bool {
        self.0.iter().all(|t| *t == SizeTriple::ZERO)
    }
}

impl fmt::Display for SizeMultiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, t) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "}}")
    }
}

pub fn size_of(g: &GVass) -> SizeMultiset {
    SizeMultiset::new(g.components.iter().map(|c| c.size(g.dim)).collect())
}

/// True iff `child` arises from `parent` by removing one triple `t` and adding
/// finitely many triples each lexicographically smaller than `t`.
pub fn refines(child: &SizeMultiset, parent: &SizeMultiset) -> bool {
    let mut candidates: Vec<SizeTriple> = parent.0.clone();
    candidates.dedup();
    candidates.into_iter().any(|t| {
        let mut rest = parent.0.clone();
        let pos = rest.iter().position(|x| *x == t).expect("candidate taken from parent");
        rest.remove(pos);
        // child must contain `rest` as a sub-multiset; the leftover must be < t.
        let mut remaining = child.0.clone();
        for r in &rest {
            match remaining.iter().position(|x| x == r) {
                Some(p) => {
                    remaining.remove(p);
                }
                None => return false,
            }
        }
        remaining.iter().all(|s| *s < t)
    })
}

/// Arc multiplicities of a pseudo-run, indexed by arc.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Folding(pub Vec<u64>);

impl Folding {
    pub fn zero(arcs: usize) -> Self {
        Self(vec![0; arcs])
    }

    pub fn get(&self, a: ArcId) -> u64 {
        self.0.get(a.0).copied().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }

    pub fn add(&self, other: &Folding) -> Folding {
        let n = self.0.len().max(other.0.len());
        Folding((0..n).map(|k| self.0.get(k).unwrap_or(&0) + other.0.get(k).unwrap_or(&0)).collect())
    }

    /// Pointwise difference, or `None` if some entry would go negative.
    pub fn checked_sub(&self, other: &Folding) -> Option<Folding> {
        let n = self.0.len().max(other.0.len());
        (0..n)
            .map(|k| self.0.get(k).unwrap_or(&0).checked_sub(*other.0.get(k).unwrap_or(&0)))
            .collect::<Option<Vec<_>>>()
            .map(Folding)
    }

    /// `Σ f(e)·z_e` over the component's arcs.
    pub fn effect(&self, comp: &Component, dim: usize) -> Vec<BigInt> {
        let mut out = vec![BigInt::zero(); dim];
        for (k, &count) in self.0.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let count = BigInt::from(count);
            for (o, z) in out.iter_mut().zip(&comp.arcs[k].effect) {
                *o += &count * z;
            }
        }
        out
    }
}

/// A sequence of arcs of one component from a start pseudo-configuration.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PseudoRun {
    pub start_state: StateId,
    pub start: Vec<BigInt>,
    pub steps: Vec<ArcId>,
}

impl PseudoRun {
    pub fn new(start_state: StateId, start: Vec<BigInt>, steps: Vec<ArcId>) -> Self {
        Self { start_state, start, steps }
    }

    /// Concatenation; `other` is expected to start where `self` ends.
    pub fn concat(&self, other: &PseudoRun) -> PseudoRun {
        let mut steps = self.steps.clone();
        steps.extend_from_slice(&other.steps);
        PseudoRun { start_state: self.start_state, start: self.start.clone(), steps }
    }

    /// Final state after checking that the arcs chain.
    pub fn end_state(&self, comp: &Component) -> Result<StateId, ModelError> {
        let mut at = self.start_state;
        for &a in &self.steps {
            let arc = comp.arcs.get(a.0).ok_or(ModelError::UnknownArc(a))?;
            if arc.source != at {
                return Err(ModelError::BrokenChain { arc: a, expected: at });
            }
            at = arc.target;
        }
        Ok(at)
    }

    /// All intermediate vectors, starting with `start`.
    pub fn vectors(&self, comp: &Component) -> Result<Vec<Vec<BigInt>>, ModelError> {
        self.end_state(comp)?;
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut cur = self.start.clone();
        out.push(cur.clone());
        for &a in &self.steps {
            for (c, z) in cur.iter_mut().zip(&comp.arcs[a.0].effect) {
                *c += z;
            }
            out.push(cur.clone());
        }
        Ok(out)
    }
}

/// Net change of the run's vector.
pub fn effect_of(run: &PseudoRun, comp: &Component) -> Result<Vec<BigInt>, ModelError> {
    run.end_state(comp)?;
    let mut eff = vec![BigInt::zero(); run.start.len()];
    for &a in &run.steps {
        let z = &comp.arcs[a.0].effect;
        if z.len() != eff.len() {
            return Err(ModelError::LengthMismatch { expected: eff.len(), found: z.len() });
        }
        for (e, zz) in eff.iter_mut().zip(z) {
            *e += zz;
        }
    }
    Ok(eff)
}

/// Arc-occurrence counts; indexed by the component's arcs.
pub fn fold_of(run: &PseudoRun, comp: &Component) -> Folding {
    let mut f = Folding::zero(comp.arcs.len());
    for &a in &run.steps {
        if let Some(slot) = f.0.get_mut(a.0) {
            *slot += 1;
        }
    }
    f
}

/// Parses a slice of machine integers into big integers.
pub fn ints(xs: &[i64]) -> Vec<BigInt> {
    xs.iter().map(|&x| BigInt::from(x)).collect()
}
