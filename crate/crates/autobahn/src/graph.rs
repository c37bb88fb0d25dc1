//! Labeled graphs, the global permutation action, subgraph enumeration
//! (paths, cycles, stars) and brute-force automorphism groups.
//!
//! Vertices are 1-based. Path and cycle "length" counts vertices, not
//! edges. Every undirected path or cycle is materialized as two
//! [`SubgraphInstance`]s, one per traversal direction, so that the
//! bond-to-preceding-node featurization cannot break equivariance.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::groupfn::{FiniteGroup, GroupFnError};
use crate::perm::{all_permutations, OrderedSubset, PermError, Permutation};

/// Brute-force automorphism search is refused above this vertex count.
pub const MAX_AUTOMORPHISM_VERTICES: usize = 8;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("vertex {vertex} outside 1..={n}")]
    VertexRange { vertex: usize, n: usize },
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("expected {n} vertex labels, found {found}")]
    LabelCount { n: usize, found: usize },
    #[error("automorphism search refused: {0} vertices exceeds cap {MAX_AUTOMORPHISM_VERTICES}")]
    AutomorphismCap(usize),
    #[error("subgraph instances belong to different host graphs")]
    HostMismatch,
    #[error("invalid {kind} traversal {traversal:?}: {reason}")]
    InvalidTraversal {
        kind: String,
        traversal: Vec<usize>,
        reason: String,
    },
    #[error("cycle length {0} must be at least 3")]
    CycleLengthTooSmall(usize),
    #[error("invalid path length range {0}..={1}")]
    PathRange(usize, usize),
    #[error(transparent)]
    Perm(#[from] PermError),
    #[error(transparent)]
    Group(#[from] GroupFnError),
}

/// An undirected graph with categorical vertex and edge labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    n: usize,
    vertex_labels: Vec<u32>,
    edges: BTreeMap<(usize, usize), u32>,
    adjacency: Vec<Vec<usize>>,
}

impl LabeledGraph {
    pub fn new(
        n: usize,
        vertex_labels: Vec<u32>,
        edges: impl IntoIterator<Item = (usize, usize, u32)>,
    ) -> Result<Self, GraphError> {
        if vertex_labels.len() != n {
            return Err(GraphError::LabelCount {
                n,
                found: vertex_labels.len(),
            });
        }
        let mut map = BTreeMap::new();
        let mut adjacency = vec![Vec::new(); n];
        for (u, v, label) in edges {
            for w in [u, v] {
                if w < 1 || w > n {
                    return Err(GraphError::VertexRange { vertex: w, n });
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            let key = (u.min(v), u.max(v));
            if map.insert(key, label).is_some() {
                return Err(GraphError::DuplicateEdge(key.0, key.1));
            }
            adjacency[u - 1].push(v);
            adjacency[v - 1].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            vertex_labels,
            edges: map,
            adjacency,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_label(&self, v: usize) -> u32 {
        self.vertex_labels[v - 1]
    }

    pub fn vertex_labels(&self) -> &[u32] {
        &self.vertex_labels
    }

    pub fn edge_label(&self, u: usize, v: usize) -> Option<u32> {
        self.edges.get(&(u.min(v), u.max(v))).copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_label(u, v).is_some()
    }

    /// Neighbors of `v` in ascending order.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v - 1]
    }

    /// Edges as `(u, v, label)` triples with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.edges.iter().map(|(&(u, v), &l)| (u, v, l))
    }

    /// A stable content fingerprint identifying the host graph (FNV-1a over
    /// the canonical edge and label lists).
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.n as u64);
        for &label in &self.vertex_labels {
            eat(label as u64);
        }
        for (&(u, v), &label) in &self.edges {
            eat(u as u64);
            eat(v as u64);
            eat(label as u64);
        }
        hash
    }

    /// The permutation action on graphs: edge `(u, v)` maps to
    /// `(σ(u), σ(v))` and vertex `σ(i)` takes the old label of `i`.
    pub fn permute(&self, sigma: &Permutation) -> Result<Self, GraphError> {
        if sigma.degree() != self.n {
            return Err(GraphError::Perm(PermError::DegreeMismatch(
                sigma.degree(),
                self.n,
            )));
        }
        let mut labels = vec![0; self.n];
        for v in 1..=self.n {
            labels[sigma.apply(v) - 1] = self.vertex_labels[v - 1];
        }
        let edges = self
            .edges
            .iter()
            .map(|(&(u, v), &l)| (sigma.apply(u), sigma.apply(v), l));
        // Collect first: the iterator borrows self.
        let edges: Vec<_> = edges.collect();
        Self::new(self.n, labels, edges)
    }

    /// All simple paths with vertex count in `[min_len, max_len]`, one
    /// instance per traversal direction, sorted lexicographically.
    pub fn enumerate_paths(
        &self,
        min_len: usize,
        max_len: usize,
    ) -> Result<Vec<SubgraphInstance>, GraphError> {
        if min_len < 2 || min_len > max_len {
            return Err(GraphError::PathRange(min_len, max_len));
        }
        let fingerprint = self.fingerprint();
        let mut traversals = Vec::new();
        let mut path = Vec::with_capacity(max_len);
        let mut on_path = vec![false; self.n + 1];
        for start in 1..=self.n {
            path.push(start);
            on_path[start] = true;
            self.extend_path(&mut path, &mut on_path, min_len, max_len, &mut traversals);
            on_path[start] = false;
            path.pop();
        }
        traversals.sort_unstable();
        Ok(traversals
            .into_iter()
            .map(|t| SubgraphInstance {
                kind: SubgraphKind::Path(t.len()),
                traversal: t,
                graph_ref: fingerprint,
            })
            .collect())
    }

    fn extend_path(
        &self,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        min_len: usize,
        max_len: usize,
        out: &mut Vec<Vec<usize>>,
    ) {
        if path.len() >= min_len {
            out.push(path.clone());
        }
        if path.len() == max_len {
            return;
        }
        let last = *path.last().expect("path is never empty here");
        for &next in self.neighbors(last) {
            if !on_path[next] {
                path.push(next);
                on_path[next] = true;
                self.extend_path(path, on_path, min_len, max_len, out);
                on_path[next] = false;
                path.pop();
            }
        }
    }

    /// All simple cycles whose vertex count is in `lengths`, two instances
    /// per cycle (one per rotation direction). The traversal starts at the
    /// cycle's smallest vertex; direction A has its second vertex smaller
    /// than its last, direction B is the reversal.
    pub fn enumerate_cycles(
        &self,
        lengths: &[usize],
    ) -> Result<Vec<SubgraphInstance>, GraphError> {
        let mut wanted = lengths.to_vec();
        wanted.sort_unstable();
        wanted.dedup();
        if let Some(&short) = wanted.iter().find(|&&l| l < 3) {
            return Err(GraphError::CycleLengthTooSmall(short));
        }
        let Some(&max_len) = wanted.last() else {
            return Ok(Vec::new());
        };
        let fingerprint = self.fingerprint();
        let mut traversals = Vec::new();
        let mut path = Vec::with_capacity(max_len);
        let mut on_path = vec![false; self.n + 1];
        for start in 1..=self.n {
            path.push(start);
            on_path[start] = true;
            self.extend_cycle(&mut path, &mut on_path, &wanted, max_len, &mut traversals);
            on_path[start] = false;
            path.pop();
        }
        let mut instances = Vec::with_capacity(traversals.len() * 2);
        for t in traversals {
            let mut reversed = t.clone();
            reversed[1..].reverse();
            let len = t.len();
            for traversal in [t, reversed] {
                instances.push(SubgraphInstance {
                    kind: SubgraphKind::Cycle(len),
                    traversal,
                    graph_ref: fingerprint,
                });
            }
        }
        instances.sort_unstable_by(|a, b| a.traversal.cmp(&b.traversal));
        Ok(instances)
    }

    fn extend_cycle(
        &self,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        wanted: &[usize],
        max_len: usize,
        out: &mut Vec<Vec<usize>>,
    ) {
        let start = path[0];
        let last = *path.last().expect("cycle path is never empty");
        if path.len() >= 3 && wanted.contains(&path.len()) && self.has_edge(last, start) {
            // Each cycle is reached in both directions; keep direction A.
            if path[1] < path[path.len() - 1] {
                out.push(path.clone());
            }
        }
        if path.len() == max_len {
            return;
        }
        for &next in self.neighbors(last) {
            // Keeping every vertex above the start makes the start minimal.
            if next > start && !on_path[next] {
                path.push(next);
                on_path[next] = true;
                self.extend_cycle(path, on_path, wanted, max_len, out);
                on_path[next] = false;
                path.pop();
            }
        }
    }

    /// One star per vertex: the center followed by its neighbors ascending.
    pub fn enumerate_stars(&self) -> Vec<SubgraphInstance> {
        let fingerprint = self.fingerprint();
        (1..=self.n)
            .map(|v| {
                let mut traversal = vec![v];
                traversal.extend_from_slice(self.neighbors(v));
                SubgraphInstance {
                    kind: SubgraphKind::Star { center: v },
                    traversal,
                    graph_ref: fingerprint,
                }
            })
            .collect()
    }

    /// All label- and adjacency-preserving permutations, by exhaustive
    /// search over `S_n`; refused above 8 vertices.
    pub fn automorphism_group(&self) -> Result<Arc<FiniteGroup>, GraphError> {
        if self.n > MAX_AUTOMORPHISM_VERTICES {
            return Err(GraphError::AutomorphismCap(self.n));
        }
        let mut elements = Vec::new();
        'candidates: for sigma in all_permutations(self.n) {
            for v in 1..=self.n {
                if self.vertex_labels[sigma.apply(v) - 1] != self.vertex_labels[v - 1] {
                    continue 'candidates;
                }
            }
            for (&(u, v), &label) in &self.edges {
                if self.edge_label(sigma.apply(u), sigma.apply(v)) != Some(label) {
                    continue 'candidates;
                }
            }
            elements.push(sigma);
        }
        Ok(FiniteGroup::from_elements(elements)?)
    }
}

/// The kind of subgraph a neuron is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SubgraphKind {
    Path(usize),
    Cycle(usize),
    Star { center: usize },
}

impl std::fmt::Display for SubgraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubgraphKind::Path(k) => write!(f, "path{k}"),
            SubgraphKind::Cycle(m) => write!(f, "cycle{m}"),
            SubgraphKind::Star { center } => write!(f, "star@{center}"),
        }
    }
}

/// A subgraph occurrence: its kind, its ordered reference domain (the
/// traversal) and the fingerprint of the host graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgraphInstance {
    kind: SubgraphKind,
    traversal: Vec<usize>,
    graph_ref: u64,
}

impl SubgraphInstance {
    /// Validates the traversal against the host graph.
    pub fn new(
        kind: SubgraphKind,
        traversal: Vec<usize>,
        graph: &LabeledGraph,
    ) -> Result<Self, GraphError> {
        let fail = |reason: &str| GraphError::InvalidTraversal {
            kind: kind.to_string(),
            traversal: traversal.clone(),
            reason: reason.to_string(),
        };
        let mut seen = vec![false; graph.vertex_count() + 1];
        for &v in &traversal {
            if v < 1 || v > graph.vertex_count() {
                return Err(fail("vertex out of range"));
            }
            if seen[v] {
                return Err(fail("repeated vertex"));
            }
            seen[v] = true;
        }
        match kind {
            SubgraphKind::Path(k) => {
                if traversal.len() != k || k < 2 {
                    return Err(fail("wrong vertex count"));
                }
                for pair in traversal.windows(2) {
                    if !graph.has_edge(pair[0], pair[1]) {
                        return Err(fail("consecutive vertices not adjacent"));
                    }
                }
            }
            SubgraphKind::Cycle(m) => {
                if traversal.len() != m || m < 3 {
                    return Err(fail("wrong vertex count"));
                }
                for pair in traversal.windows(2) {
                    if !graph.has_edge(pair[0], pair[1]) {
                        return Err(fail("consecutive vertices not adjacent"));
                    }
                }
                if !graph.has_edge(traversal[m - 1], traversal[0]) {
                    return Err(fail("cycle does not close"));
                }
            }
            SubgraphKind::Star { center } => {
                let mut expected = vec![center];
                expected.extend_from_slice(graph.neighbors(center));
                if traversal != expected {
                    return Err(fail("star traversal must be center then neighbors ascending"));
                }
            }
        }
        Ok(Self {
            kind,
            traversal,
            graph_ref: graph.fingerprint(),
        })
    }

    pub fn kind(&self) -> SubgraphKind {
        self.kind
    }

    /// The ordered reference domain.
    pub fn traversal(&self) -> &[usize] {
        &self.traversal
    }

    pub fn graph_ref(&self) -> u64 {
        self.graph_ref
    }

    pub fn len(&self) -> usize {
        self.traversal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traversal.is_empty()
    }

    /// 1-based position of `vertex` within the traversal.
    pub fn position_of(&self, vertex: usize) -> Option<usize> {
        self.traversal.iter().position(|&v| v == vertex).map(|p| p + 1)
    }

    /// Vertices common to both traversals, ordered by position in `self`,
    /// as an ordered subset of the host graph's vertex set.
    pub fn intersect_domains(&self, other: &Self) -> Result<OrderedSubset, GraphError> {
        if self.graph_ref != other.graph_ref {
            return Err(GraphError::HostMismatch);
        }
        let ambient = self.ambient_guess(other);
        let shared: Vec<usize> = self
            .traversal
            .iter()
            .copied()
            .filter(|v| other.traversal.contains(v))
            .collect();
        Ok(OrderedSubset::new(shared, ambient)?)
    }

    fn ambient_guess(&self, other: &Self) -> usize {
        // The instances only carry a fingerprint, not the host; any ambient
        // that covers both traversals gives the same ordered subset.
        self.traversal
            .iter()
            .chain(other.traversal.iter())
            .copied()
            .max()
            .unwrap_or(0)
    }
}
