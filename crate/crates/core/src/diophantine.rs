//! Nonnegative solutions of linear Diophantine systems, and the Θ1 test.
//!
//! The characteristic system of a GVASS has one column per unconstrained
//! boundary coordinate and per arc, laid out as `(u_1, f_1, u'_1, …)`. Its
//! nonnegative solutions describe exactly the pseudo-runs of the GVASS's
//! run shape, and form a hybrid-linear set `B + P*`: `B` is the set of
//! minimal solutions, `P` the Hilbert basis of the homogeneous system.
//!
//! Both are computed by the Contejean–Devié completion procedure. The
//! inhomogeneous case is reduced to the homogeneous one by a slack column
//! `-b` whose value is capped at 1.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::time::Instant;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::graph::{is_strongly_connected, MultiGraph};
use crate::model::{ArcId, Coord, GVass};

/// Integer matrix stored by rows; `cols` is explicit so that a matrix with
/// no rows still has a width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matrix {
    pub rows: Vec<Vec<BigInt>>,
    pub cols: usize,
}

impl Matrix {
    pub fn new(cols: usize, rows: Vec<Vec<BigInt>>) -> Self {
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix");
        Self { rows, cols }
    }

    pub fn from_i64(cols: usize, rows: &[&[i64]]) -> Self {
        Self::new(cols, rows.iter().map(|r| r.iter().map(|&x| BigInt::from(x)).collect()).collect())
    }

    /// `A x` for a nonnegative vector.
    pub fn apply(&self, x: &[u64]) -> Vec<BigInt> {
        self.rows
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, &xi)| a * BigInt::from(xi)).sum())
            .collect()
    }
}

/// Meaning of a column of the characteristic system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Column {
    /// Initial unconstrained value `u_i(coord)`.
    InUnconstrained { component: usize, coord: Coord },
    /// Number of uses of an arc of component `i`.
    ArcUse { component: usize, arc: ArcId },
    /// Final unconstrained value `u'_i(coord)`.
    OutUnconstrained { component: usize, coord: Coord },
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::InUnconstrained { component, coord } => write!(f, "in-coord({component},{coord})"),
            Column::ArcUse { component, arc } => write!(f, "arc({component},{})", arc.0),
            Column::OutUnconstrained { component, coord } => write!(f, "out-coord({component},{coord})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearSystem {
    pub matrix: Matrix,
    pub rhs: Vec<BigInt>,
    pub columns: Vec<Column>,
}

impl LinearSystem {
    pub fn equations(&self) -> usize {
        self.matrix.rows.len()
    }

    pub fn variables(&self) -> usize {
        self.matrix.cols
    }

    pub fn is_solution(&self, x: &[u64]) -> bool {
        self.matrix.apply(x) == self.rhs
    }

    pub fn column_index(&self, col: &Column) -> Option<usize> {
        self.columns.iter().position(|c| c == col)
    }
}

/// `L = B + P*`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct HybridLinearSet {
    pub base: Vec<Vec<u64>>,
    pub periods: Vec<Vec<u64>>,
}

impl HybridLinearSet {
    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Sum of all periods.
    pub fn period_sum(&self, width: usize) -> Vec<u64> {
        let mut out = vec![0u64; width];
        for p in &self.periods {
            for (o, x) in out.iter_mut().zip(p) {
                *o += x;
            }
        }
        out
    }

    /// Membership in `B + P*`, by bounded search over the periods.
    pub fn contains(&self, x: &[u64]) -> bool {
        self.base.iter().any(|b| {
            match x.iter().zip(b).map(|(a, b)| a.checked_sub(*b)).collect::<Option<Vec<u64>>>() {
                Some(rest) => decomposes(&rest, &self.periods, 0),
                None => false,
            }
        })
    }
}

/// True when `x` is a nonnegative integer combination of `gens[from..]`.
pub fn decomposes(x: &[u64], gens: &[Vec<u64>], from: usize) -> bool {
    if x.iter().all(|&v| v == 0) {
        return true;
    }
    for k in from..gens.len() {
        let g = &gens[k];
        if let Some(rest) = x.iter().zip(g).map(|(a, b)| a.checked_sub(*b)).collect::<Option<Vec<u64>>>() {
            if decomposes(&rest, gens, k) {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolverError {
    #[error("completion budget of {0} vectors exhausted")]
    Budget(usize),
    #[error("time limit reached during completion")]
    Deadline,
}

/// Limits on a completion run.
#[derive(Clone, Copy, Debug)]
pub struct SolverBudget {
    pub max_vectors: usize,
    pub deadline: Option<Instant>,
}

impl SolverBudget {
    pub const UNLIMITED: SolverBudget = SolverBudget { max_vectors: usize::MAX, deadline: None };
}

/// Hilbert basis of `{x ∈ N^k : A x = 0} \ {0}`.
pub fn hilbert_basis(a: &Matrix) -> Vec<Vec<u64>> {
    hilbert_basis_within(a, &SolverBudget::UNLIMITED).expect("unlimited budget")
}

pub fn hilbert_basis_within(a: &Matrix, budget: &SolverBudget) -> Result<Vec<Vec<u64>>, SolverError> {
    let active = vec![true; a.cols];
    let forced = forced_zero(&a.rows, a.cols, active);
    run_completion(&a.rows, a.cols, &forced, None, budget)
}

/// `≤`-minimal elements of `{x ∈ N^k : A x = b}`.
pub fn minimal_solutions(a: &Matrix, b: &[BigInt]) -> Vec<Vec<u64>> {
    solve_hybrid_within(a, b, &SolverBudget::UNLIMITED).expect("unlimited budget").base
}

pub fn solve_hybrid(sys: &LinearSystem) -> HybridLinearSet {
    solve_hybrid_within(&sys.matrix, &sys.rhs, &SolverBudget::UNLIMITED).expect("unlimited budget")
}

/// Minimal solutions and Hilbert basis from one completion of the
/// homogenized system `[A | -b] (x, t) = 0` with `t ≤ 1`.
pub fn solve_hybrid_within(a: &Matrix, b: &[BigInt], budget: &SolverBudget) -> Result<HybridLinearSet, SolverError> {
    assert_eq!(a.rows.len(), b.len(), "rhs length");
    let k = a.cols;
    let rows: Vec<Vec<BigInt>> = a
        .rows
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(-rhs);
            r
        })
        .collect();
    let active = forced_zero(&rows, k + 1, vec![true; k + 1]);
    let all = run_completion(&rows, k + 1, &active, Some(k), budget)?;
    let mut set = HybridLinearSet::default();
    for mut v in all {
        let t = v.pop().expect("slack column");
        if t == 0 {
            set.periods.push(v);
        } else {
            set.base.push(v);
        }
    }
    set.base.sort();
    set.periods.sort();
    Ok(set)
}

/// Marks columns that are zero in every nonnegative solution: whenever a
/// row's entries on the still-active columns all share one sign, every
/// column it touches must be zero.
fn forced_zero(rows: &[Vec<BigInt>], cols: usize, mut active: Vec<bool>) -> Vec<bool> {
    debug_assert_eq!(active.len(), cols);
    loop {
        let mut changed = false;
        for row in rows {
            let mut pos = false;
            let mut neg = false;
            for (c, a) in row.iter().enumerate() {
                if active[c] {
                    pos |= a.is_positive();
                    neg |= a.is_negative();
                }
            }
            if pos != neg {
                for (c, a) in row.iter().enumerate() {
                    if active[c] && !a.is_zero() {
                        active[c] = false;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return active;
        }
    }
}

trait Scalar: Clone + Eq + Hash + fmt::Debug {
    fn nil() -> Self;
    fn is_nil(&self) -> bool;
    fn below_zero(&self) -> bool;
    fn plus(&self, other: &Self) -> Option<Self>;
    fn times(&self, other: &Self) -> Option<Self>;
}

impl Scalar for i64 {
    fn nil() -> Self {
        0
    }
    fn is_nil(&self) -> bool {
        *self == 0
    }
    fn below_zero(&self) -> bool {
        *self < 0
    }
    fn plus(&self, other: &Self) -> Option<Self> {
        self.checked_add(*other)
    }
    fn times(&self, other: &Self) -> Option<Self> {
        self.checked_mul(*other)
    }
}

impl Scalar for BigInt {
    fn nil() -> Self {
        BigInt::zero()
    }
    fn is_nil(&self) -> bool {
        Zero::is_zero(self)
    }
    fn below_zero(&self) -> bool {
        Signed::is_negative(self)
    }
    fn plus(&self, other: &Self) -> Option<Self> {
        Some(self + other)
    }
    fn times(&self, other: &Self) -> Option<Self> {
        Some(self * other)
    }
}

enum Stop {
    Overflow,
    Solver(SolverError),
}

/// Runs the completion on the active columns and lifts the result back to
/// full width.
fn run_completion(
    rows: &[Vec<BigInt>],
    cols: usize,
    active: &[bool],
    capped: Option<usize>,
    budget: &SolverBudget,
) -> Result<Vec<Vec<u64>>, SolverError> {
    let kept: Vec<usize> = (0..cols).filter(|&c| active[c]).collect();
    let kept_rows: Vec<Vec<BigInt>> = rows
        .iter()
        .map(|r| kept.iter().map(|&c| r[c].clone()).collect::<Vec<_>>())
        .filter(|r: &Vec<BigInt>| r.iter().any(|x| !Zero::is_zero(x)))
        .collect();
    let mut dedup: Vec<Vec<BigInt>> = Vec::new();
    for r in kept_rows {
        if !dedup.contains(&r) {
            dedup.push(r);
        }
    }
    let capped = capped.and_then(|c| kept.iter().position(|&k| k == c));
    let columns: Vec<Vec<(usize, BigInt)>> = (0..kept.len())
        .map(|j| {
            dedup
                .iter()
                .enumerate()
                .filter(|(_, r)| !Zero::is_zero(&r[j]))
                .map(|(i, r)| (i, r[j].clone()))
                .collect()
        })
        .collect();

    let small: Option<Vec<Vec<(usize, i64)>>> = columns
        .iter()
        .map(|col| col.iter().map(|(i, a)| a.to_i32().map(|v| (*i, v as i64))).collect())
        .collect();
    let reduced = match small {
        Some(cols64) => match complete(&cols64, dedup.len(), capped, budget) {
            Ok(v) => Ok(v),
            Err(Stop::Overflow) => complete(&columns, dedup.len(), capped, budget),
            Err(e) => Err(e),
        },
        None => complete(&columns, dedup.len(), capped, budget),
    };
    let reduced = match reduced {
        Ok(v) => v,
        Err(Stop::Solver(e)) => return Err(e),
        Err(Stop::Overflow) => unreachable!("big integers do not overflow"),
    };
    let mut out: Vec<Vec<u64>> = reduced
        .into_iter()
        .map(|x| {
            let mut full = vec![0u64; cols];
            for (v, &c) in x.into_iter().zip(&kept) {
                full[c] = v;
            }
            full
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Contejean–Devié completion, breadth first by total degree.
///
/// `columns[j]` lists the nonzero entries `(row, a_ij)` of column `j`. A
/// non-solution `x` is extended by `e_j` only when `<A x, A e_j> < 0`;
/// candidates that dominate an already accepted solution are dropped.
fn complete<T: Scalar>(
    columns: &[Vec<(usize, T)>],
    rows: usize,
    capped: Option<usize>,
    budget: &SolverBudget,
) -> Result<Vec<Vec<u64>>, Stop> {
    let n = columns.len();
    let mut solutions: Vec<Vec<u64>> = Vec::new();
    // solutions with a positive entry in column j
    let mut by_column: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut generated = 0usize;

    let mut frontier: Vec<(Vec<u64>, Vec<T>)> = (0..n)
        .map(|j| {
            let mut x = vec![0u64; n];
            x[j] = 1;
            let mut d = vec![T::nil(); rows];
            for (i, a) in &columns[j] {
                d[*i] = a.clone();
            }
            (x, d)
        })
        .collect();

    while !frontier.is_empty() {
        let mut pending = Vec::with_capacity(frontier.len());
        for (x, d) in frontier {
            if d.iter().all(T::is_nil) {
                let id = solutions.len();
                for (j, &v) in x.iter().enumerate() {
                    if v > 0 {
                        by_column[j].push(id);
                    }
                }
                solutions.push(x);
            } else {
                pending.push((x, d));
            }
        }

        let mut next: HashMap<Vec<u64>, Vec<T>> = HashMap::new();
        let mut rejected: HashSet<Vec<u64>> = HashSet::new();
        for (x, d) in &pending {
            for j in 0..n {
                if capped == Some(j) && x[j] >= 1 {
                    continue;
                }
                let mut dot = T::nil();
                for (i, a) in &columns[j] {
                    dot = dot.plus(&d[*i].times(a).ok_or(Stop::Overflow)?).ok_or(Stop::Overflow)?;
                }
                if !dot.below_zero() {
                    continue;
                }
                let mut y = x.clone();
                y[j] += 1;
                if next.contains_key(&y) || rejected.contains(&y) {
                    continue;
                }
                // y ≥ s is only possible for solutions s that use column j
                // more often than x does.
                let dominated = by_column[j].iter().any(|&s| {
                    let s = &solutions[s];
                    s.iter().zip(&y).all(|(a, b)| a <= b)
                });
                if dominated {
                    rejected.insert(y);
                    continue;
                }
                let mut nd = d.clone();
                for (i, a) in &columns[j] {
                    nd[*i] = nd[*i].plus(a).ok_or(Stop::Overflow)?;
                }
                next.insert(y, nd);
                generated += 1;
                if generated > budget.max_vectors {
                    return Err(Stop::Solver(SolverError::Budget(budget.max_vectors)));
                }
                if generated.is_multiple_of(4096) {
                    if let Some(deadline) = budget.deadline {
                        if Instant::now() >= deadline {
                            return Err(Stop::Solver(SolverError::Deadline));
                        }
                    }
                }
            }
        }
        frontier = next.into_iter().collect();
    }
    Ok(solutions)
}

/// Builds the linear system whose nonnegative solutions are the foldings
/// and unconstrained boundary values of pseudo-runs of the GVASS run shape.
///
/// Equations, in order: per component the Kirchhoff rows (one per state)
/// and the effect rows (one per coordinate), then the boundary rows (one
/// per coordinate) for each connecting arc.
pub fn build_characteristic_system(g: &GVass) -> LinearSystem {
    let d = g.dim;
    let mut columns = Vec::new();
    for (i, comp) in g.components.iter().enumerate() {
        columns.extend(comp.input_free.iter().map(|&coord| Column::InUnconstrained { component: i, coord }));
        columns.extend((0..comp.arcs.len()).map(|e| Column::ArcUse { component: i, arc: ArcId(e) }));
        columns.extend(comp.output_free.iter().map(|&coord| Column::OutUnconstrained { component: i, coord }));
    }
    let index: HashMap<Column, usize> = columns.iter().enumerate().map(|(k, c)| (*c, k)).collect();
    let k = columns.len();
    let mut rows: Vec<Vec<BigInt>> = Vec::new();
    let mut rhs: Vec<BigInt> = Vec::new();

    // Boundary value of coordinate j: constant or a variable.
    enum Term {
        Const(BigInt),
        Var(usize),
    }
    let start = |i: usize, j: Coord| -> Term {
        let comp = &g.components[i];
        if let Some(v) = comp.rigid.get(j).or_else(|| comp.input.get(j)) {
            Term::Const(v.clone())
        } else {
            Term::Var(index[&Column::InUnconstrained { component: i, coord: j }])
        }
    };
    let end = |i: usize, j: Coord| -> Term {
        let comp = &g.components[i];
        if let Some(v) = comp.rigid.get(j).or_else(|| comp.output.get(j)) {
            Term::Const(v.clone())
        } else {
            Term::Var(index[&Column::OutUnconstrained { component: i, coord: j }])
        }
    };
    // Adds `sign * term` to the row; constants go to the right-hand side.
    fn put(row: &mut [BigInt], rhs: &mut BigInt, term: Term, sign: i64) {
        match term {
            Term::Const(c) => *rhs -= c * sign,
            Term::Var(v) => row[v] += sign,
        }
    }

    for (i, comp) in g.components.iter().enumerate() {
        for s in 0..comp.states.len() {
            let mut row = vec![BigInt::zero(); k];
            for (e, arc) in comp.arcs.iter().enumerate() {
                let col = index[&Column::ArcUse { component: i, arc: ArcId(e) }];
                if arc.target.0 == s {
                    row[col] += 1;
                }
                if arc.source.0 == s {
                    row[col] -= 1;
                }
            }
            let b = (comp.final_state.0 == s) as i64 - (comp.initial.0 == s) as i64;
            rows.push(row);
            rhs.push(BigInt::from(b));
        }
        for j in 0..d {
            // start + Σ f(e) z_e(j) - end = 0
            let mut row = vec![BigInt::zero(); k];
            let mut b = BigInt::zero();
            put(&mut row, &mut b, start(i, j), 1);
            for (e, arc) in comp.arcs.iter().enumerate() {
                row[index[&Column::ArcUse { component: i, arc: ArcId(e) }]] += &arc.effect[j];
            }
            put(&mut row, &mut b, end(i, j), -1);
            rows.push(row);
            rhs.push(b);
        }
    }
    for (i, z) in g.connectors.iter().enumerate() {
        for (j, zj) in z.iter().enumerate() {
            // end_i + z - start_{i+1} = 0
            let mut row = vec![BigInt::zero(); k];
            let mut b = -zj.clone();
            put(&mut row, &mut b, end(i, j), 1);
            put(&mut row, &mut b, start(i + 1, j), -1);
            rows.push(row);
            rhs.push(b);
        }
    }
    LinearSystem { matrix: Matrix::new(k, rows), rhs, columns }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum Theta1Result {
    Holds,
    Infeasible,
    /// Every period is zero on `column`; every solution has at most
    /// `bound` there.
    ZeroCoordinate { column: Column, bound: u64 },
}

/// Θ1 verdict together with the data it was read from.
#[derive(Clone, Debug)]
pub struct Theta1Analysis {
    pub system: LinearSystem,
    /// Absent when the result came from [`crate::relax::theta1_relaxed`].
    pub hybrid: Option<HybridLinearSet>,
    pub result: Theta1Result,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Theta1Error {
    #[error("component {0} is not strongly connected")]
    NotStronglyConnected(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub fn theta1(g: &GVass) -> Result<Theta1Result, Theta1Error> {
    theta1_within(g, &SolverBudget::UNLIMITED).map(|a| a.result)
}

/// Decides Θ1 from the hybrid-linear solution set of the characteristic
/// system: it holds iff the set is nonempty and the sum of all periods is
/// positive on every column.
pub fn theta1_within(g: &GVass, budget: &SolverBudget) -> Result<Theta1Analysis, Theta1Error> {
    for (i, comp) in g.components.iter().enumerate() {
        if !is_strongly_connected(&MultiGraph::new(comp.states.len(), comp.edges())) {
            return Err(Theta1Error::NotStronglyConnected(i));
        }
    }
    let system = build_characteristic_system(g);
    let hybrid = solve_hybrid_within(&system.matrix, &system.rhs, budget)?;
    let result = if hybrid.base.is_empty() {
        Theta1Result::Infeasible
    } else {
        let total = hybrid.period_sum(system.variables());
        match total.iter().position(|&x| x == 0) {
            None => Theta1Result::Holds,
            Some(col) => Theta1Result::ZeroCoordinate {
                column: system.columns[col],
                bound: hybrid.base.iter().map(|b| b[col]).max().unwrap_or(0),
            },
        }
    };
    Ok(Theta1Analysis { system, hybrid: Some(hybrid), result })
}

/// Θ1 from the Hilbert basis when the completion stays within
/// `budget.max_vectors`, from the linear relaxation otherwise.
pub fn theta1_with_fallback(g: &GVass, budget: &SolverBudget) -> Result<Theta1Analysis, Theta1Error> {
    match theta1_within(g, budget) {
        Err(Theta1Error::Solver(SolverError::Budget(_))) => {
            let system = build_characteristic_system(g);
            let result = crate::relax::theta1_relaxed(&system);
            Ok(Theta1Analysis { system, hybrid: None, result })
        }
        other => other,
    }
}
