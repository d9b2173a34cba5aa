//! Multigraph algorithms on the control graph of a component.

use std::collections::BTreeSet;

use thiserror::Error;

/// Directed multigraph; the edge id is the position in `edges`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiGraph {
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
}

impl MultiGraph {
    pub fn new(vertices: usize, edges: Vec<(usize, usize)>) -> Self {
        debug_assert!(edges.iter().all(|&(s, t)| s < vertices && t < vertices));
        Self { vertices, edges }
    }

    fn successors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices];
        for &(s, t) in &self.edges {
            adj[s].push(t);
        }
        adj
    }

    fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices];
        for &(s, t) in &self.edges {
            adj[t].push(s);
        }
        adj
    }

    /// Vertices reachable from `from` (including itself).
    pub fn reachable_from(&self, from: usize) -> Vec<bool> {
        flood(&self.successors(), from)
    }

    /// Vertices from which `to` is reachable (including itself).
    pub fn co_reachable(&self, to: usize) -> Vec<bool> {
        flood(&self.predecessors(), to)
    }
}

fn flood(adj: &[Vec<usize>], from: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// An edge of the condensation DAG with the original edges it stands for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DagEdge {
    pub from: usize,
    pub to: usize,
    pub edges: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condensation {
    /// SCC id of every vertex. Ids are in topological order: every DAG edge
    /// goes from a smaller id to a larger one.
    pub membership: Vec<usize>,
    pub count: usize,
    pub dag: Vec<DagEdge>,
}

impl Condensation {
    pub fn members(&self, scc: usize) -> Vec<usize> {
        (0..self.membership.len()).filter(|&v| self.membership[v] == scc).collect()
    }
}

/// Strongly connected components (Tarjan, iterative).
pub fn scc(g: &MultiGraph) -> Condensation {
    let n = g.vertices;
    let adj = g.successors();
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![UNSEEN; n];
    let mut found = 0;
    let mut next = 0;

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        // (vertex, next successor position)
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp[w] = found;
                        if w == v {
                            break;
                        }
                    }
                    found += 1;
                }
            }
        }
    }

    // Tarjan emits SCCs in reverse topological order.
    let membership: Vec<usize> = comp.iter().map(|&c| found - 1 - c).collect();
    let mut dag: Vec<DagEdge> = Vec::new();
    for (id, &(s, t)) in g.edges.iter().enumerate() {
        let (a, b) = (membership[s], membership[t]);
        if a == b {
            continue;
        }
        match dag.iter_mut().find(|e| e.from == a && e.to == b) {
            Some(e) => e.edges.push(id),
            None => dag.push(DagEdge { from: a, to: b, edges: vec![id] }),
        }
    }
    dag.sort_by_key(|e| (e.from, e.to));
    Condensation { membership, count: found, dag }
}

pub fn is_strongly_connected(g: &MultiGraph) -> bool {
    g.vertices <= 1 || scc(g).count == 1
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EulerError {
    #[error("vertex {vertex} has in-weight minus out-weight off by {surplus}")]
    DegreeImbalance { vertex: usize, surplus: i128 },
    #[error("support of the folding splits into {components} connected pieces")]
    DisconnectedSupport { components: usize },
    #[error("folding has {found} entries, graph has {expected} edges")]
    WrongLength { expected: usize, found: usize },
}

/// Edge sequence from `start` to `end` using edge `e` exactly `f[e]` times.
///
/// Hierholzer's construction on the multiplicity-expanded graph; at every
/// vertex the unused edge with the smallest id is taken first.
pub fn eulerian_path(g: &MultiGraph, f: &[u64], start: usize, end: usize) -> Result<Vec<usize>, EulerError> {
    if f.len() != g.edges.len() {
        return Err(EulerError::WrongLength { expected: g.edges.len(), found: f.len() });
    }
    let n = g.vertices;
    let mut balance = vec![0i128; n];
    for (&(s, t), &m) in g.edges.iter().zip(f) {
        balance[t] += m as i128;
        balance[s] -= m as i128;
    }
    for (v, &b) in balance.iter().enumerate() {
        let expected = (v == end) as i128 - (v == start) as i128;
        if b != expected {
            return Err(EulerError::DegreeImbalance { vertex: v, surplus: b - expected });
        }
    }

    // Connectivity of support ∪ {start, end}, ignoring direction.
    let mut dsu = Dsu::new(n);
    let mut touched = BTreeSet::from([start, end]);
    for (&(s, t), &m) in g.edges.iter().zip(f) {
        if m > 0 {
            dsu.union(s, t);
            touched.insert(s);
            touched.insert(t);
        }
    }
    let roots: BTreeSet<usize> = touched.iter().map(|&v| dsu.find(v)).collect();
    if roots.len() > 1 {
        return Err(EulerError::DisconnectedSupport { components: roots.len() });
    }

    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (id, &(s, _)) in g.edges.iter().enumerate() {
        if f[id] > 0 {
            out_edges[s].push(id);
        }
    }
    let mut left: Vec<u64> = f.to_vec();
    let mut cursor = vec![0usize; n];
    let total: u64 = f.iter().sum();

    // Iterative Hierholzer: the stack holds (vertex, edge used to enter it).
    let mut stack: Vec<(usize, Option<usize>)> = vec![(start, None)];
    let mut path: Vec<usize> = Vec::with_capacity(total as usize);
    while let Some(&(v, via)) = stack.last() {
        while cursor[v] < out_edges[v].len() && left[out_edges[v][cursor[v]]] == 0 {
            cursor[v] += 1;
        }
        if cursor[v] < out_edges[v].len() {
            let e = out_edges[v][cursor[v]];
            left[e] -= 1;
            stack.push((g.edges[e].1, Some(e)));
        } else {
            stack.pop();
            if let Some(e) = via {
                path.push(e);
            }
        }
    }
    path.reverse();
    debug_assert_eq!(path.len() as u64, total);
    Ok(path)
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, v: usize) -> usize {
        let mut root = v;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = v;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}
