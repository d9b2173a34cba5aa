//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gvass::coverability::{karp_miller, CoverError, ExtNat, ProjectedArc, ProjectedVass};
use gvass::decomposition::{decide, Answer, DecideConfig, Decision, DecompositionNode, Outcome as NodeOutcome, Step};
use gvass::diophantine::{hilbert_basis, minimal_solutions, Matrix};
use gvass::graph::{eulerian_path, EulerError, MultiGraph};
use gvass::model::{ArcId, GVass, SizeMultiset, SizeTriple};
use gvass::oracle::{bfs_cover, bfs_reach, generate, BoxVerdict, GenParams, OracleVerdict};
use gvass::text::parse;
use num_bigint::BigInt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

const CORPUS: u64 = 1000;
const TIME_LIMIT: Duration = Duration::from_secs(60);

fn instance_params(seed: u64) -> GenParams {
    GenParams {
        dim: 1 + (seed % 3) as usize,
        states: 1 + (seed / 3 % 4) as usize,
        arcs: 1 + (seed / 12 % 6) as usize,
        effect_bound: 2,
        value_bound: 3,
        components: 1 + (seed / 72 % 2) as usize,
        unconstrained_prob: if seed.is_multiple_of(5) { 0.3 } else { 0.0 },
        rigid_prob: if seed.is_multiple_of(7) { 0.3 } else { 0.0 },
        seed,
    }
}

struct Entry {
    seed: u64,
    oracle: Option<bool>,
    /// `Err` holds the panic message.
    decision: Result<Decision, String>,
    secs: f64,
}

fn run_decide(g: &GVass) -> (Result<Decision, String>, f64) {
    let config = DecideConfig { time_limit: Some(TIME_LIMIT), ..DecideConfig::default() };
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(|| decide(g, &config)));
    let decision = match result {
        Ok(Ok(d)) => Ok(d),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()),
    };
    (decision, t.elapsed().as_secs_f64())
}

fn corpus() -> &'static [Entry] {
    static CELL: OnceLock<Vec<Entry>> = OnceLock::new();
    CELL.get_or_init(|| {
        (0..CORPUS)
            .into_par_iter()
            .map(|seed| {
                let g = generate(&instance_params(seed));
                let oracle = bfs_reach(&g, 50, 1_000_000).as_bool();
                let (decision, secs) = run_decide(&g);
                Entry { seed, oracle, decision, secs }
            })
            .collect()
    })
}

/// Extra instances with many unconstrained coordinates, so that the
/// unconstrained shape of the pumping refinement shows up.
fn supplement() -> &'static [Entry] {
    static CELL: OnceLock<Vec<Entry>> = OnceLock::new();
    CELL.get_or_init(|| {
        (0..600u64)
            .into_par_iter()
            .map(|k| {
                let seed = 1_000_000 + k;
                let params = GenParams { unconstrained_prob: 0.6, rigid_prob: 0.0, ..instance_params(seed) };
                let (decision, secs) = run_decide(&generate(&params));
                Entry { seed, oracle: None, decision, secs }
            })
            .collect()
    })
}

fn as_bool(a: Answer) -> Option<bool> {
    match a {
        Answer::Reachable => Some(true),
        Answer::Unreachable => Some(false),
        Answer::ResourceExhausted => None,
    }
}

fn oracle_agreement() -> Outcome {
    let entries = corpus();
    let mut conclusive = 0;
    let mut mismatches = Vec::new();
    for e in entries {
        let Some(expected) = e.oracle else { continue };
        conclusive += 1;
        let got = e.decision.as_ref().ok().and_then(|d| as_bool(d.answer));
        if got != Some(expected) {
            mismatches.push((e.seed, expected, got));
        }
    }
    let slowest = entries.iter().map(|e| e.secs).fold(0.0, f64::max);
    Outcome {
        pass: mismatches.is_empty() && conclusive >= 500,
        detail: format!(
            "{} instances, {conclusive} conclusive, {} disagreements {:?}, slowest {slowest:.2}s",
            entries.len(),
            mismatches.len(),
            &mismatches[..mismatches.len().min(10)]
        ),
    }
}

fn solves(a: &[Vec<i64>], b: &[i64], x: &[u64]) -> bool {
    a.iter().zip(b).all(|(row, &bi)| row.iter().zip(x).map(|(&c, &v)| c * v as i64).sum::<i64>() == bi)
}

fn leq(x: &[u64], y: &[u64]) -> bool {
    x.iter().zip(y).all(|(a, b)| a <= b)
}

fn box_points(k: usize, max: u64) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        out = out.into_iter().flat_map(|p| (0..=max).map(move |v| [p.clone(), vec![v]].concat())).collect();
    }
    out
}

fn minimal(sols: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let mut out: Vec<Vec<u64>> = sols.iter().filter(|x| !sols.iter().any(|y| y != *x && leq(y, x))).cloned().collect();
    out.sort();
    out
}

/// Whether `x` is a sum of periods.
fn generated(x: &[u64], periods: &[Vec<u64>], memo: &mut HashSet<Vec<u64>>) -> bool {
    if x.iter().all(|&v| v == 0) || memo.contains(x) {
        return true;
    }
    for p in periods {
        if leq(p, x) {
            let rest: Vec<u64> = x.iter().zip(p).map(|(a, b)| a - b).collect();
            if generated(&rest, periods, memo) {
                memo.insert(x.to_vec());
                return true;
            }
        }
    }
    false
}

fn hilbert_basis_agreement() -> Outcome {
    const BOX: u64 = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut checked, mut skipped, mut failures) = (0, 0, Vec::new());
    for trial in 0..2000 {
        if checked >= 300 {
            break;
        }
        let k = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=3);
        let a: Vec<Vec<i64>> = (0..m).map(|_| (0..k).map(|_| rng.gen_range(-3..=3)).collect()).collect();
        let b: Vec<i64> = (0..m).map(|_| rng.gen_range(-3..=3)).collect();
        let rows: Vec<&[i64]> = a.iter().map(Vec::as_slice).collect();
        let matrix = Matrix::from_i64(k, &rows);
        let periods = hilbert_basis(&matrix);
        let bases = minimal_solutions(&matrix, &b.iter().map(|&x| BigInt::from(x)).collect::<Vec<_>>());
        let fits = |v: &Vec<Vec<u64>>| v.iter().flatten().all(|&x| x <= BOX);
        if !fits(&periods) || !fits(&bases) {
            skipped += 1;
            continue;
        }
        let points = box_points(k, BOX);
        let zero = vec![0; m];
        let homogeneous: Vec<Vec<u64>> =
            points.iter().filter(|x| x.iter().any(|&v| v > 0) && solves(&a, &zero, x)).cloned().collect();
        let inhomogeneous: Vec<Vec<u64>> = points.iter().filter(|x| solves(&a, &b, x)).cloned().collect();
        let mut sorted_p = periods.clone();
        sorted_p.sort();
        let mut sorted_b = bases.clone();
        sorted_b.sort();
        let mut memo = HashSet::new();
        let all_generated = homogeneous.iter().all(|x| generated(x, &periods, &mut memo))
            && inhomogeneous
                .iter()
                .all(|x| bases.iter().any(|base| leq(base, x) && generated(&x.iter().zip(base).map(|(p, q)| p - q).collect::<Vec<_>>(), &periods, &mut memo)));
        if sorted_p != minimal(&homogeneous) || sorted_b != minimal(&inhomogeneous) || !all_generated {
            failures.push(trial);
        }
        checked += 1;
    }
    Outcome {
        pass: failures.is_empty() && checked >= 200,
        detail: format!("{checked} systems, {skipped} skipped (solutions outside the box), {} mismatches {:?}", failures.len(), failures),
    }
}

fn random_vass(rng: &mut ChaCha8Rng) -> ProjectedVass {
    let dim = rng.gen_range(1..=3);
    let states = rng.gen_range(1..=3);
    let arcs = (0..rng.gen_range(1..=5))
        .map(|k| ProjectedArc {
            source: rng.gen_range(0..states),
            target: rng.gen_range(0..states),
            effect: (0..dim).map(|_| BigInt::from(rng.gen_range(-2..=2))).collect(),
            origin: ArcId(k),
        })
        .collect();
    ProjectedVass { states, coords: (0..dim).collect(), arcs }
}

fn karp_miller_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut instances, mut queries, mut inconclusive, mut omegas, mut uncertified) = (0, 0, 0, 0, 0);
    let mut failures = Vec::new();
    while instances < 400 {
        let vass = random_vass(&mut rng);
        let dim = vass.dim();
        let init: Vec<BigInt> = (0..dim).map(|_| BigInt::from(rng.gen_range(0..=3))).collect();
        let tree = match karp_miller(&vass, 0, &init, 100_000) {
            Ok(t) => t,
            Err(CoverError::Budget { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        instances += 1;
        for _ in 0..4 {
            let state = rng.gen_range(0..vass.states);
            let target: Vec<BigInt> = (0..dim).map(|_| BigInt::from(rng.gen_range(0..=6))).collect();
            match bfs_cover(&vass, 0, &init, state, &target, 30, 1_000_000) {
                BoxVerdict::Unknown => inconclusive += 1,
                v => {
                    queries += 1;
                    if (v == BoxVerdict::Yes) != tree.covers(state, &target) {
                        failures.push((instances, state, target));
                    }
                }
            }
        }
        for node in &tree.nodes {
            if !node.marking.iter().any(ExtNat::is_omega) {
                continue;
            }
            for j in (0..dim).filter(|&j| node.marking[j].is_omega()) {
                omegas += 1;
                let mut target = vec![BigInt::from(0); dim];
                target[j] = BigInt::from(10);
                let verdict = [30, 60, 120, 240]
                    .into_iter()
                    .map(|bound| bfs_cover(&vass, 0, &init, node.state, &target, bound, 1_000_000))
                    .find(|v| *v != BoxVerdict::Unknown)
                    .unwrap_or(BoxVerdict::Unknown);
                match verdict {
                    BoxVerdict::Yes => {}
                    BoxVerdict::Unknown => uncertified += 1,
                    BoxVerdict::No => failures.push((instances, node.state, target)),
                }
            }
        }
    }
    Outcome {
        pass: failures.is_empty() && instances >= 300 && uncertified == 0,
        detail: format!(
            "{instances} systems, {queries} conclusive queries ({inconclusive} clipped), {omegas} ω entries ({uncertified} uncertified), {} disagreements {:?}",
            failures.len(),
            &failures[..failures.len().min(5)]
        ),
    }
}

fn random_strong_graph(rng: &mut ChaCha8Rng, min_vertices: usize) -> MultiGraph {
    let n = rng.gen_range(min_vertices..=5);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|v| (v, (v + 1) % n)).collect();
    for _ in 0..rng.gen_range(0..=6) {
        edges.push((rng.gen_range(0..n), rng.gen_range(0..n)));
    }
    edges.shuffle(rng);
    MultiGraph::new(n, edges)
}

fn random_walk(g: &MultiGraph, rng: &mut ChaCha8Rng, from: usize, steps: usize) -> (Vec<u64>, usize) {
    let mut f = vec![0; g.edges.len()];
    let mut at = from;
    for _ in 0..steps {
        let out: Vec<usize> = (0..g.edges.len()).filter(|&e| g.edges[e].0 == at).collect();
        let e = *out.choose(rng).expect("strongly connected");
        f[e] += 1;
        at = g.edges[e].1;
    }
    (f, at)
}

fn fold(g: &MultiGraph, path: &[usize]) -> Vec<u64> {
    let mut f = vec![0; g.edges.len()];
    for &e in path {
        f[e] += 1;
    }
    f
}

fn chains(g: &MultiGraph, path: &[usize], from: usize, to: usize) -> bool {
    let mut at = from;
    for &e in path {
        if g.edges[e].0 != at {
            return false;
        }
        at = g.edges[e].1;
    }
    at == to
}

fn eulerian_constructor() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    for trial in 0..200 {
        let g = random_strong_graph(&mut rng, 1);
        let from = rng.gen_range(0..g.vertices);
        let steps = rng.gen_range(0..=25);
        let (f, to) = random_walk(&g, &mut rng, from, steps);
        match eulerian_path(&g, &f, from, to) {
            Ok(path) if fold(&g, &path) == f && chains(&g, &path, from, to) => {}
            _ => failures.push(("balanced", trial)),
        }
    }
    for trial in 0..50 {
        let g = random_strong_graph(&mut rng, 2);
        let from = rng.gen_range(0..g.vertices);
        let steps = rng.gen_range(0..=25);
        let (mut f, to) = random_walk(&g, &mut rng, from, steps);
        let e = (0..g.edges.len()).filter(|&e| g.edges[e].0 != g.edges[e].1).collect::<Vec<_>>();
        f[*e.choose(&mut rng).expect("cycle edges are not loops")] += 1;
        if !matches!(eulerian_path(&g, &f, from, to), Err(EulerError::DegreeImbalance { .. })) {
            failures.push(("imbalanced", trial));
        }
    }
    Outcome { pass: failures.is_empty(), detail: format!("200 balanced, 50 imbalanced, {} failures {:?}", failures.len(), failures) }
}

fn refinement_preservation() -> Outcome {
    const PER_RULE: usize = 300;
    let fixes = |n: &DecompositionNode| n.children().iter().any(|c| matches!(c.step, Some(Step::Fix { .. })));
    // the two shapes of the pumping rule are capped separately
    let mut pairs: BTreeMap<(&str, bool), Vec<&DecompositionNode>> = BTreeMap::new();
    for e in corpus().iter().chain(supplement()) {
        let Ok(d) = &e.decision else { continue };
        d.root.walk(0, &mut |n, _| {
            if let NodeOutcome::Refined { rule, .. } = &n.outcome {
                let list = pairs.entry((rule.name(), rule.name() == "theta2" && fixes(n))).or_default();
                if list.len() < PER_RULE {
                    list.push(n);
                }
            }
        });
    }
    let oracle = |g: &GVass| bfs_reach(g, 30, 200_000).as_bool();
    let mut pass = true;
    let mut detail = Vec::new();
    for rule in ["scc", "theta1-arc", "theta1-coord", "theta2"] {
        let nodes: Vec<&DecompositionNode> = [false, true].iter().flat_map(|&f| pairs.get(&(rule, f)).into_iter().flatten().copied()).collect();
        let results: Vec<Option<bool>> = nodes
            .par_iter()
            .map(|n| {
                let parent = oracle(&n.gvass)?;
                let children: Vec<Option<bool>> = n.children().iter().map(|c| oracle(&c.gvass)).collect();
                let joined = if children.contains(&Some(true)) {
                    true
                } else if children.iter().all(|c| *c == Some(false)) {
                    false
                } else {
                    return None;
                };
                Some(parent == joined)
            })
            .collect();
        let conclusive = results.iter().flatten().count();
        let bad = results.iter().filter(|r| **r == Some(false)).count();
        pass &= bad == 0 && conclusive >= 100;
        let mut line = format!("{rule} {conclusive}/{} conclusive, {bad} mismatches", nodes.len());
        if rule == "theta2" {
            let shape = |f: fn(&Step) -> bool| {
                nodes.iter().zip(&results).filter(|(n, r)| r.is_some() && n.children().iter().any(|c| c.step.as_ref().is_some_and(f))).count()
            };
            let fixed = shape(|s| matches!(s, Step::Fix { .. }));
            let tracked = shape(|s| matches!(s, Step::Track { .. }));
            line += &format!(" ({fixed} with unconstrained, {tracked} with constrained far side)");
        }
        detail.push(line);
    }
    Outcome { pass, detail: detail.join("; ") }
}

/// Child sizes must replace one parent triple by strictly smaller ones.
fn strictly_refines(child: &SizeMultiset, parent: &SizeMultiset) -> bool {
    let mut removed: Vec<SizeTriple> = parent.triples().to_vec();
    let mut added = Vec::new();
    for t in child.triples() {
        match removed.iter().position(|x| x == t) {
            Some(p) => {
                removed.remove(p);
            }
            None => added.push(*t),
        }
    }
    removed.len() == 1 && added.iter().all(|t| *t < removed[0])
}

fn termination_discipline() -> Outcome {
    let entries: Vec<&Entry> = corpus().iter().chain(supplement()).collect();
    let (mut nodes, mut violations, mut panics, mut unfinished) = (0, Vec::new(), Vec::new(), Vec::new());
    for e in &entries {
        match &e.decision {
            Err(msg) => panics.push((e.seed, msg.clone())),
            Ok(d) => {
                if d.answer == Answer::ResourceExhausted {
                    unfinished.push(e.seed);
                }
                d.root.walk(0, &mut |n, _| {
                    nodes += 1;
                    if n.children().iter().any(|c| !strictly_refines(&c.size, &n.size)) {
                        violations.push(e.seed);
                    }
                });
            }
        }
    }
    let slowest = entries.iter().map(|e| e.secs).fold(0.0, f64::max);
    Outcome {
        pass: violations.is_empty() && panics.is_empty() && unfinished.is_empty(),
        detail: format!(
            "{} instances, {nodes} nodes, {} size violations, {} panics {:?}, {} not finished within {}s {:?}, slowest {slowest:.2}s",
            entries.len(),
            violations.len(),
            panics.len(),
            &panics[..panics.len().min(3)],
            unfinished.len(),
            TIME_LIMIT.as_secs(),
            &unfinished[..unfinished.len().min(10)]
        ),
    }
}

fn named_instances() -> Outcome {
    let cases = [
        ("parity", "vass dim 1 { states q ; arc a: q -> q [2] ; from q [0] ; to q [1] ; }", Answer::Unreachable, None),
        ("plus-one", "vass dim 1 { states q ; arc a: q -> q [1] ; from q [0] ; to q [5] ; }", Answer::Reachable, Some("a a a a a")),
        (
            "two-counter",
            "vass dim 2 { states q ; arc a: q -> q [1, 1] ; arc b: q -> q [-2, 0] ; from q [0, 0] ; to q [0, 2] ; }",
            Answer::Reachable,
            Some("a a b"),
        ),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, src, expected, witness) in cases {
        let g = parse(src).expect("named instance parses").gvass;
        let t = Instant::now();
        let answer = decide(&g, &DecideConfig::default()).expect("valid").answer;
        let secs = t.elapsed().as_secs_f64();
        let found = match bfs_reach(&g, 50, 1_000_000) {
            OracleVerdict::Yes(w) => Some(w.describe(&g)),
            _ => None,
        };
        let ok = answer == expected && secs < 1.0 && found.as_deref() == witness;
        pass &= ok;
        detail.push(format!("{name} {answer:?} in {:.3}s, witness {}", secs, found.as_deref().unwrap_or("none")));
    }
    Outcome { pass, detail: detail.join("; ") }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 oracle agreement", oracle_agreement),
        ("2 hilbert basis", hilbert_basis_agreement),
        ("3 karp-miller vs search", karp_miller_agreement),
        ("4 eulerian constructor", eulerian_constructor),
        ("5 refinement preservation", refinement_preservation),
        ("6 termination discipline", termination_discipline),
        ("7 named instances", named_instances),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let outcome = run();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {status} ({}; {:.1}s)", outcome.detail, t.elapsed().as_secs_f64());
        failed += usize::from(!outcome.pass);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
