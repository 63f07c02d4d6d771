//! Overlay graph: undirected adjacency in CSR form, edge-list loading,
//! hop distances and normalized transition weights.
//!
//! Node ids are compacted to `0..n` in order of first appearance so that
//! downstream matrices can be indexed densely; the original ids are retained
//! for reporting.

use std::collections::{HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_rng;

pub type NodeId = u32;

/// Undirected simple graph over dense node ids.
#[derive(Debug, Clone)]
pub struct OverlayGraph {
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
    original_ids: Vec<u64>,
    edge_count: usize,
}

impl OverlayGraph {
    /// Build a graph from edges over dense ids `0..node_count`.
    ///
    /// Self-loops are dropped; duplicate and reversed edges collapse into one
    /// undirected edge. `node_count` may exceed the ids referenced by edges,
    /// leaving isolated nodes.
    pub fn from_dense_edges(
        node_count: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidParameter(
                "graph must have at least one node".into(),
            ));
        }
        let mut seen = HashSet::new();
        let mut adjacency: Vec<Vec<NodeId>> = vec![Vec::new(); node_count];
        let mut edge_count = 0;
        for (u, v) in edges {
            if u as usize >= node_count || v as usize >= node_count {
                return Err(Error::InvalidParameter(format!(
                    "edge ({u}, {v}) references a node outside 0..{node_count}"
                )));
            }
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                adjacency[u as usize].push(v);
                adjacency[v as usize].push(u);
                edge_count += 1;
            }
        }

        let mut offsets = Vec::with_capacity(node_count + 1);
        let mut neighbors = Vec::with_capacity(2 * edge_count);
        offsets.push(0);
        for list in &mut adjacency {
            list.sort_unstable();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            offsets,
            neighbors,
            original_ids: (0..node_count as u64).collect(),
            edge_count,
        })
    }

    /// Build a graph from edges over arbitrary ids, compacting them to dense
    /// ids in order of first appearance.
    pub fn from_edges(edges: impl IntoIterator<Item = (u64, u64)>) -> Result<Self> {
        let mut dense = std::collections::HashMap::new();
        let mut original_ids = Vec::new();
        let mut dense_edges = Vec::new();
        for (a, b) in edges {
            let mut id_of = |orig: u64| -> NodeId {
                *dense.entry(orig).or_insert_with(|| {
                    original_ids.push(orig);
                    (original_ids.len() - 1) as NodeId
                })
            };
            let u = id_of(a);
            let v = id_of(b);
            dense_edges.push((u, v));
        }
        if original_ids.is_empty() {
            return Err(Error::InvalidParameter(
                "edge list is empty; a graph with zero nodes is rejected".into(),
            ));
        }
        let mut graph = Self::from_dense_edges(original_ids.len(), dense_edges)?;
        graph.original_ids = original_ids;
        Ok(graph)
    }

    /// Load a whitespace-separated edge list. Lines starting with `#` are
    /// comments; every other line must hold exactly two integer node ids.
    pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut edges = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split_whitespace();
            let parse = |field: Option<&str>| -> Result<u64> {
                field
                    .ok_or_else(|| "expected two node ids".to_string())
                    .and_then(|f| {
                        f.parse::<u64>()
                            .map_err(|e| format!("bad node id {f:?}: {e}"))
                    })
                    .map_err(|message| Error::Parse {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        message,
                    })
            };
            let u = parse(fields.next())?;
            let v = parse(fields.next())?;
            if fields.next().is_some() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: "expected exactly two node ids".into(),
                });
            }
            edges.push((u, v));
        }
        if edges.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "no edges found".into(),
            });
        }
        Self::from_edges(edges)
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.neighbors(u).len()
    }

    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        let u = u as usize;
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn contains(&self, u: NodeId) -> bool {
        (u as usize) < self.node_count()
    }

    /// The id a node carried in the source edge list.
    pub fn original_id(&self, u: NodeId) -> u64 {
        self.original_ids[u as usize]
    }

    /// BFS hop distances from `src`; `None` marks unreachable nodes.
    pub fn bfs_distances(&self, src: NodeId) -> Result<Vec<Option<u32>>> {
        if !self.contains(src) {
            return Err(Error::InvalidParameter(format!(
                "node {src} is not in the graph"
            )));
        }
        let mut dist = vec![None; self.node_count()];
        dist[src as usize] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize].expect("queued nodes have distances");
            for &v in self.neighbors(u) {
                if dist[v as usize].is_none() {
                    dist[v as usize] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }

    /// Shortest hop count between two nodes, `None` if disconnected.
    pub fn hop_distance(&self, src: NodeId, dst: NodeId) -> Result<Option<u32>> {
        if !self.contains(dst) {
            return Err(Error::InvalidParameter(format!(
                "node {dst} is not in the graph"
            )));
        }
        Ok(self.bfs_distances(src)?[dst as usize])
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_distances(0)
            .map(|d| d.iter().all(|x| x.is_some()))
            .unwrap_or(false)
    }
}

/// Normalization applied to the adjacency structure when diffusing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Entry (u, v) is 1/degree(v) when {u, v} is an edge: columns sum to one
    /// and diffusion preserves total mass.
    ColumnStochastic,
    /// Entry (u, v) is 1/sqrt(degree(u) * degree(v)).
    Symmetric,
}

/// Sparse normalized adjacency operator, aligned with the graph's CSR layout.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    graph: Arc<OverlayGraph>,
    mode: NormalizationMode,
    weights: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(graph: Arc<OverlayGraph>, mode: NormalizationMode) -> Self {
        let n = graph.node_count();
        let mut weights = Vec::with_capacity(graph.neighbors.len());
        for u in 0..n as NodeId {
            let du = graph.degree(u) as f64;
            for &v in graph.neighbors(u) {
                let w = match mode {
                    NormalizationMode::ColumnStochastic => 1.0 / graph.degree(v) as f64,
                    NormalizationMode::Symmetric => 1.0 / (du * graph.degree(v) as f64).sqrt(),
                };
                weights.push(w);
            }
        }
        Self {
            graph,
            mode,
            weights,
        }
    }

    pub fn graph(&self) -> &OverlayGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> Arc<OverlayGraph> {
        Arc::clone(&self.graph)
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Neighbors of `u` paired with their transition weights.
    pub fn row(&self, u: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let u = u as usize;
        let range = self.graph.offsets[u]..self.graph.offsets[u + 1];
        self.graph.neighbors[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    /// Dense entry (u, v); zero when {u, v} is not an edge.
    pub fn entry(&self, u: NodeId, v: NodeId) -> f64 {
        self.row(u)
            .find(|&(w, _)| w == v)
            .map(|(_, weight)| weight)
            .unwrap_or(0.0)
    }

    pub fn column_sum(&self, v: NodeId) -> f64 {
        (0..self.node_count() as NodeId)
            .map(|u| self.entry(u, v))
            .sum()
    }
}

/// Ring lattice with `degree` nearest neighbors per node, each clockwise edge
/// rewired with probability `rewire`. Retries deterministically derived seeds
/// until the result is connected.
pub fn watts_strogatz(n: usize, degree: usize, rewire: f64, seed: u64) -> Result<OverlayGraph> {
    if n < 3 || degree < 2 || !degree.is_multiple_of(2) || degree >= n {
        return Err(Error::InvalidParameter(format!(
            "watts-strogatz requires n >= 3 and an even degree in 2..n, got n={n} degree={degree}"
        )));
    }
    if !(0.0..=1.0).contains(&rewire) {
        return Err(Error::InvalidParameter(format!(
            "rewire probability must lie in [0, 1], got {rewire}"
        )));
    }
    const ATTEMPTS: u64 = 64;
    for attempt in 0..ATTEMPTS {
        let mut rng = derived_rng(seed, &[0x7753_u64, attempt]);
        let mut edges: HashSet<(NodeId, NodeId)> = HashSet::new();
        for u in 0..n {
            for j in 1..=degree / 2 {
                let v = (u + j) % n;
                edges.insert(ordered(u as NodeId, v as NodeId));
            }
        }
        for u in 0..n {
            for j in 1..=degree / 2 {
                let v = (u + j) % n;
                let key = ordered(u as NodeId, v as NodeId);
                if !edges.contains(&key) || !rng.gen_bool(rewire) {
                    continue;
                }
                // Rewire (u, v) to (u, w) for a uniform non-duplicate target.
                let mut candidates: Vec<NodeId> = (0..n as NodeId)
                    .filter(|&w| {
                        w != u as NodeId && !edges.contains(&ordered(u as NodeId, w))
                    })
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                candidates.sort_unstable();
                let w = candidates[rng.gen_range(0..candidates.len())];
                edges.remove(&key);
                edges.insert(ordered(u as NodeId, w));
            }
        }
        let mut edge_list: Vec<(NodeId, NodeId)> = edges.into_iter().collect();
        edge_list.sort_unstable();
        let graph = OverlayGraph::from_dense_edges(n, edge_list)?;
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(Error::Numeric(format!(
        "failed to sample a connected watts-strogatz graph after {ATTEMPTS} attempts"
    )))
}

/// Uniform random spanning tree plus `extra_edges` random extra edges;
/// connected by construction.
pub fn random_connected(n: usize, extra_edges: usize, seed: u64) -> Result<OverlayGraph> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "graph must have at least one node".into(),
        ));
    }
    let mut rng = derived_rng(seed, &[0x7201_u64]);
    let mut order: Vec<NodeId> = (0..n as NodeId).collect();
    order.shuffle(&mut rng);
    let mut edges = Vec::new();
    for i in 1..n {
        let parent = order[rng.gen_range(0..i)];
        edges.push((parent, order[i]));
    }
    for _ in 0..extra_edges {
        if n < 2 {
            break;
        }
        let u = rng.gen_range(0..n) as NodeId;
        let v = rng.gen_range(0..n) as NodeId;
        edges.push((u, v));
    }
    OverlayGraph::from_dense_edges(n, edges)
}

fn ordered(u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    (u.min(v), u.max(v))
}
