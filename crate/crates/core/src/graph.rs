//! View graph data model: nodes `0..n`, undirected edges carrying oriented
//! relative-rotation measurements, spanning trees and fundamental cycles.
//!
//! Orientation convention: the measurement stored for an edge `{i, j}` with
//! `i < j` is `sigma(i, j) ~ lambda_i^-1 * lambda_j`, so that
//! `lambda_j = lambda_i * sigma(i, j)` for consistent data. The reverse
//! orientation is always computed as the exact conjugate.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::so3::{geodesic_distance, Rotation};

pub type EdgeId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    /// Smaller endpoint.
    pub i: usize,
    /// Larger endpoint.
    pub j: usize,
    /// `sigma(i, j)` for `i < j`.
    pub measurement: Rotation,
    /// Confidence in `(0, 1]`.
    pub weight: f64,
}

impl Edge {
    /// Other endpoint of the edge as seen from `node`.
    pub fn other(&self, node: usize) -> usize {
        if node == self.i {
            self.j
        } else {
            self.i
        }
    }

    /// Measurement oriented from `from` towards the other endpoint.
    pub fn oriented_from(&self, from: usize) -> Rotation {
        if from == self.i {
            self.measurement
        } else {
            self.measurement.inverse()
        }
    }
}

/// Simple undirected graph of relative-rotation measurements.
#[derive(Clone, Debug)]
pub struct ViewGraph {
    labels: Vec<u64>,
    edges: Vec<Edge>,
    index: HashMap<(usize, usize), EdgeId>,
    adjacency: Vec<Vec<(usize, EdgeId)>>,
}

impl PartialEq for ViewGraph {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.edges == other.edges
    }
}

impl ViewGraph {
    /// Graph with `n` nodes labelled `0..n` and no edges.
    pub fn new(n: usize) -> Self {
        Self::with_labels((0..n as u64).collect())
    }

    /// Graph whose dense node `k` carries the external id `labels[k]`.
    pub fn with_labels(labels: Vec<u64>) -> Self {
        let n = labels.len();
        Self {
            labels,
            edges: Vec::new(),
            index: HashMap::new(),
            adjacency: vec![Vec::new(); n],
        }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    /// `(neighbor, edge id)` pairs incident to `node`.
    pub fn neighbors(&self, node: usize) -> &[(usize, EdgeId)] {
        &self.adjacency[node]
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<EdgeId> {
        self.index.get(&(a.min(b), a.max(b))).copied()
    }

    /// Adds the measurement `sigma(i, j)`; `i > j` is stored as the inverse on `(j, i)`.
    pub fn add_edge(
        &mut self,
        i: usize,
        j: usize,
        measurement: Rotation,
        weight: f64,
    ) -> Result<EdgeId> {
        let n = self.node_count();
        for node in [i, j] {
            if node >= n {
                return Err(Error::NodeOutOfRange { node, n });
            }
        }
        if i == j {
            return Err(Error::SelfLoop(i));
        }
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::InvalidWeight(weight));
        }
        let key = (i.min(j), i.max(j));
        if self.index.contains_key(&key) {
            return Err(Error::DuplicateEdge(key.0, key.1));
        }
        let measurement = if i < j {
            measurement
        } else {
            measurement.inverse()
        };
        let id = self.edges.len();
        self.edges.push(Edge {
            i: key.0,
            j: key.1,
            measurement,
            weight,
        });
        self.index.insert(key, id);
        self.adjacency[key.0].push((key.1, id));
        self.adjacency[key.1].push((key.0, id));
        Ok(id)
    }

    /// `sigma(i, j)`; the `(j, i)` query returns the exact inverse of the stored value.
    pub fn oriented_measurement(&self, i: usize, j: usize) -> Result<Rotation> {
        let id = self.edge_id(i, j).ok_or(Error::MissingEdge(i, j))?;
        Ok(self.edges[id].oriented_from(i))
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.weight).collect()
    }

    /// Copy of the graph with per-edge weights replaced (indexed by edge id).
    pub fn with_weights(&self, weights: &[f64]) -> Result<ViewGraph> {
        assert_eq!(weights.len(), self.edges.len(), "one weight per edge");
        let mut g = self.clone();
        for (e, &w) in g.edges.iter_mut().zip(weights) {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::InvalidWeight(w));
            }
            e.weight = w;
        }
        Ok(g)
    }

    /// Connected components in order of their smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.node_count() > 0 && self.components().len() == 1
    }

    fn require_connected(&self) -> Result<()> {
        if self.node_count() == 0 {
            return Err(Error::EmptyGraph);
        }
        let components = self.components().len();
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(())
    }

    /// Subgraph induced by the largest connected component (first one on ties),
    /// densely re-indexed. The second value maps old node ids to new ones.
    pub fn largest_component(&self) -> Result<(ViewGraph, Vec<Option<usize>>)> {
        if self.node_count() == 0 {
            return Err(Error::EmptyGraph);
        }
        let comps = self.components();
        let best = comps
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .map(|(_, c)| c)
            .expect("nonempty");
        Ok(self.induced(best))
    }

    /// Subgraph induced by `nodes` (any order; re-indexed in ascending order).
    pub fn induced(&self, nodes: &[usize]) -> (ViewGraph, Vec<Option<usize>>) {
        let mut keep = nodes.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let mut mapping = vec![None; self.node_count()];
        for (new, &old) in keep.iter().enumerate() {
            mapping[old] = Some(new);
        }
        let mut g = ViewGraph::with_labels(keep.iter().map(|&k| self.labels[k]).collect());
        for e in &self.edges {
            if let (Some(a), Some(b)) = (mapping[e.i], mapping[e.j]) {
                g.add_edge(a, b, e.measurement, e.weight)
                    .expect("induced subgraph of a simple graph is simple");
            }
        }
        (g, mapping)
    }

    /// Breadth-first spanning tree rooted at `root`.
    pub fn spanning_tree(&self, root: usize) -> Result<SpanningTree> {
        self.require_connected()?;
        let n = self.node_count();
        if root >= n {
            return Err(Error::NodeOutOfRange { node: root, n });
        }
        let mut parent = vec![None; n];
        let mut depth = vec![0usize; n];
        let mut in_tree = vec![false; self.edge_count()];
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, e) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, e));
                    depth[v] = depth[u] + 1;
                    in_tree[e] = true;
                    queue.push_back(v);
                }
            }
        }
        Ok(SpanningTree {
            root,
            parent,
            depth,
            order,
            in_tree,
        })
    }

    /// Fundamental cycle basis from the BFS tree rooted at node 0: one cycle per
    /// non-tree edge. Cycles longer than `max_len` are kept and flagged.
    pub fn cycle_basis(&self, max_len: usize) -> Result<CycleSet> {
        let tree = self.spanning_tree(0)?;
        let mut cycles = Vec::new();
        for (id, e) in self.edges.iter().enumerate() {
            if tree.in_tree[id] {
                continue;
            }
            let nodes = tree.fundamental_cycle_nodes(e.i, e.j);
            let cycle = Cycle::from_nodes(self, nodes, max_len)?;
            cycles.push(cycle);
        }
        Ok(CycleSet::new(cycles, self.edge_count()))
    }

    /// Ordered product of oriented measurements along a node path.
    pub fn compose_path(&self, path: &[usize]) -> Result<Rotation> {
        let mut acc = Rotation::IDENTITY;
        for pair in path.windows(2) {
            let id = self
                .edge_id(pair[0], pair[1])
                .ok_or(Error::BrokenPath(pair[0], pair[1]))?;
            acc = acc * self.edges[id].oriented_from(pair[0]);
        }
        Ok(acc)
    }

    /// Angle of the composed measurements around `cycle`; with `use_weights`
    /// each measurement is raised to its edge weight first.
    pub fn cycle_residual(&self, cycle: &Cycle, use_weights: bool) -> f64 {
        self.cycle_residual_with(cycle, |id| {
            if use_weights {
                self.edges[id].weight
            } else {
                1.0
            }
        })
    }

    /// Cycle residual with caller-supplied per-edge powers.
    pub fn cycle_residual_with(&self, cycle: &Cycle, weight: impl Fn(EdgeId) -> f64) -> f64 {
        let mut acc = Rotation::IDENTITY;
        for (t, step) in cycle.steps.iter().enumerate() {
            let e = &self.edges[step.edge];
            let sigma = e.oriented_from(cycle.nodes[t]);
            let w = weight(step.edge);
            acc = acc * if w == 1.0 { sigma } else { sigma.pow(w) };
        }
        geodesic_distance(&acc, &Rotation::IDENTITY)
    }
}

#[derive(Clone, Debug)]
pub struct SpanningTree {
    pub root: usize,
    /// `(parent node, edge id)` per node; `None` at the root.
    pub parent: Vec<Option<(usize, EdgeId)>>,
    pub depth: Vec<usize>,
    /// BFS visit order starting at the root.
    pub order: Vec<usize>,
    /// Per edge id: whether the edge belongs to the tree.
    pub in_tree: Vec<bool>,
}

impl SpanningTree {
    pub fn tree_edges(&self) -> Vec<EdgeId> {
        self.parent.iter().filter_map(|p| p.map(|(_, e)| e)).collect()
    }

    /// Absolute rotations obtained by composing measurements from the root
    /// (`lambda_root = I`, `lambda_child = lambda_parent * sigma(parent, child)`).
    pub fn propagate(&self, graph: &ViewGraph) -> Vec<Rotation> {
        let mut out = vec![Rotation::IDENTITY; self.parent.len()];
        for &v in &self.order {
            if let Some((u, e)) = self.parent[v] {
                out[v] = out[u] * graph.edge(e).oriented_from(u);
            }
        }
        out
    }

    /// Node sequence `lca -> .. -> a -> b -> .. -> (child of lca)` closing the
    /// non-tree edge `{a, b}` with tree paths.
    fn fundamental_cycle_nodes(&self, a: usize, b: usize) -> Vec<usize> {
        let (mut u, mut v) = (a, b);
        let mut up_a = vec![u];
        let mut up_b = vec![v];
        while self.depth[u] > self.depth[v] {
            u = self.parent[u].expect("non-root").0;
            up_a.push(u);
        }
        while self.depth[v] > self.depth[u] {
            v = self.parent[v].expect("non-root").0;
            up_b.push(v);
        }
        while u != v {
            u = self.parent[u].expect("non-root").0;
            v = self.parent[v].expect("non-root").0;
            up_a.push(u);
            up_b.push(v);
        }
        // up_a: a .. lca, up_b: b .. lca
        up_b.pop();
        let mut nodes: Vec<usize> = up_a.into_iter().rev().collect();
        nodes.extend(up_b);
        nodes
    }
}

/// One traversal step of a cycle: the edge used and whether it is walked in
/// its stored orientation (`i -> j`, sign +1) or inverted (sign -1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CycleStep {
    pub edge: EdgeId,
    pub forward: bool,
}

impl CycleStep {
    pub fn sign(&self) -> i8 {
        if self.forward {
            1
        } else {
            -1
        }
    }
}

/// Closed walk `nodes[0] -> nodes[1] -> .. -> nodes[L-1] -> nodes[0]`;
/// `steps[t]` connects `nodes[t]` to `nodes[(t + 1) % L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cycle {
    pub nodes: Vec<usize>,
    pub steps: Vec<CycleStep>,
    /// Longer than the requested `max_len`.
    pub over_length: bool,
}

impl Cycle {
    pub fn from_nodes(graph: &ViewGraph, nodes: Vec<usize>, max_len: usize) -> Result<Cycle> {
        let len = nodes.len();
        if len < 3 {
            return Err(Error::BrokenPath(
                nodes.first().copied().unwrap_or(0),
                nodes.last().copied().unwrap_or(0),
            ));
        }
        let mut steps = Vec::with_capacity(len);
        for t in 0..len {
            let (a, b) = (nodes[t], nodes[(t + 1) % len]);
            let edge = graph.edge_id(a, b).ok_or(Error::BrokenPath(a, b))?;
            steps.push(CycleStep {
                edge,
                forward: a < b,
            });
        }
        Ok(Cycle {
            nodes,
            steps,
            over_length: len > max_len,
        })
    }

    /// Number of edges (equal to the number of nodes).
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Fundamental cycles plus an edge -> containing-cycles index.
#[derive(Clone, Debug, Default)]
pub struct CycleSet {
    pub cycles: Vec<Cycle>,
    pub membership: Vec<Vec<usize>>,
}

impl CycleSet {
    pub fn new(cycles: Vec<Cycle>, edge_count: usize) -> Self {
        let mut membership = vec![Vec::new(); edge_count];
        for (c, cycle) in cycles.iter().enumerate() {
            for step in &cycle.steps {
                membership[step.edge].push(c);
            }
        }
        Self { cycles, membership }
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Per edge id: whether the edge lies on at least one cycle.
    pub fn cyclic_edges(&self) -> Vec<bool> {
        self.membership.iter().map(|m| !m.is_empty()).collect()
    }

    pub fn cyclic_edge_count(&self) -> usize {
        self.membership.iter().filter(|m| !m.is_empty()).count()
    }
}
