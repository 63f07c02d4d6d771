//! Personalized-PageRank diffusion of node summaries.
//!
//! Every node starts from a personalization row (the sum of its local
//! document embeddings) and the network converges toward the fixed point of
//!
//! ```text
//! E = (1 - a) * A * E + a * E0
//! ```
//!
//! Three routes to that fixed point are provided: a direct linear solve
//! (the reference oracle), the synchronous power iteration, and the
//! asynchronous pairwise gossip that real overlays would run. The gossip
//! variant also yields each node's table of last-seen neighbor summaries,
//! which is exactly the (possibly stale) state query routing works from.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingVector;
use crate::error::{Error, Result};
use crate::graph::{NodeId, OverlayGraph, TransitionMatrix};
use crate::rng::derived_rng;

/// Largest node count accepted by the dense closed-form solve.
pub const CLOSED_FORM_NODE_LIMIT: usize = 20_000;

/// Dense row-per-node matrix of embedding values.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMatrix {
    nodes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl NodeMatrix {
    pub fn zeros(nodes: usize, dim: usize) -> Self {
        Self {
            nodes,
            dim,
            data: vec![0.0; nodes * dim],
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, u: NodeId) -> &[f64] {
        let i = u as usize * self.dim;
        &self.data[i..i + self.dim]
    }

    pub fn row_mut(&mut self, u: NodeId) -> &mut [f64] {
        let i = u as usize * self.dim;
        &mut self.data[i..i + self.dim]
    }

    pub fn row_vector(&self, u: NodeId) -> EmbeddingVector {
        EmbeddingVector::new(self.row(u).to_vec())
    }

    pub fn add_to_row(&mut self, u: NodeId, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: values.len(),
                context: format!("row update for node {u}"),
            });
        }
        for (a, b) in self.row_mut(u).iter_mut().zip(values) {
            *a += b;
        }
        Ok(())
    }

    /// Largest absolute entry difference between two equally shaped matrices.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.nodes, other.nodes);
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Per-dimension totals over all nodes (mass per dimension).
    pub fn dimension_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.dim];
        for u in 0..self.nodes {
            for (t, v) in totals
                .iter_mut()
                .zip(&self.data[u * self.dim..(u + 1) * self.dim])
            {
                *t += v;
            }
        }
        totals
    }
}

/// Sum of a node's local document embeddings. The sum is deliberately left
/// unnormalized so that relevance against the summary decomposes into the
/// sum of per-document relevances.
pub fn personalization_vector<'a>(
    dim: usize,
    docs: impl IntoIterator<Item = &'a EmbeddingVector>,
) -> Result<EmbeddingVector> {
    let mut out = EmbeddingVector::zeros(dim);
    for doc in docs {
        out.add_assign(doc)?;
    }
    Ok(out)
}

/// How a diffusion result was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionMethod {
    ClosedForm,
    Synchronous,
    Asynchronous,
}

impl fmt::Display for DiffusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DiffusionMethod::ClosedForm => "closed-form",
            DiffusionMethod::Synchronous => "synchronous",
            DiffusionMethod::Asynchronous => "asynchronous",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for DiffusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed-form" => Ok(DiffusionMethod::ClosedForm),
            "synchronous" => Ok(DiffusionMethod::Synchronous),
            "asynchronous" => Ok(DiffusionMethod::Asynchronous),
            other => Err(Error::InvalidParameter(format!(
                "unknown diffusion method {other:?}"
            ))),
        }
    }
}

/// Converged node summaries plus provenance.
#[derive(Debug, Clone)]
pub struct DiffusedEmbeddings {
    pub rows: NodeMatrix,
    pub alpha: f64,
    pub method: DiffusionMethod,
    /// Iterations (synchronous), ticks (asynchronous) or 0 (closed form).
    pub rounds: usize,
}

/// One node's last-received summary per neighbor. Entries start unknown and
/// are treated as zero vectors until the first exchange fills them.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    neighbors: Vec<NodeId>,
    dim: usize,
    rows: Vec<f64>,
    known: Vec<bool>,
}

impl NeighborTable {
    pub fn new(neighbors: Vec<NodeId>, dim: usize) -> Self {
        debug_assert!(neighbors.windows(2).all(|w| w[0] < w[1]));
        let count = neighbors.len();
        Self {
            neighbors,
            dim,
            rows: vec![0.0; count * dim],
            known: vec![false; count],
        }
    }

    /// Table pre-filled with exact rows, as if gossip had fully converged.
    pub fn from_exact(graph: &OverlayGraph, u: NodeId, rows: &NodeMatrix) -> Self {
        let mut table = Self::new(graph.neighbors(u).to_vec(), rows.dim());
        for &v in graph.neighbors(u) {
            table.set(v, rows.row(v));
        }
        table
    }

    pub fn neighbors(&self) -> &[NodeId] {
        &self.neighbors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn position(&self, v: NodeId) -> Option<usize> {
        self.neighbors.binary_search(&v).ok()
    }

    /// Last summary received from `v`; `None` when `v` is unknown or has not
    /// exchanged yet.
    pub fn get(&self, v: NodeId) -> Option<&[f64]> {
        let pos = self.position(v)?;
        if !self.known[pos] {
            return None;
        }
        Some(&self.rows[pos * self.dim..(pos + 1) * self.dim])
    }

    /// Record the summary received from `v`. Values from nodes that are not
    /// neighbors are ignored.
    pub fn set(&mut self, v: NodeId, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        if let Some(pos) = self.position(v) {
            self.rows[pos * self.dim..(pos + 1) * self.dim].copy_from_slice(row);
            self.known[pos] = true;
        }
    }
}

/// Apply the normalized adjacency operator: `out[u] = sum_v A(u, v) * m[v]`.
pub fn apply_transition(matrix: &TransitionMatrix, m: &NodeMatrix) -> NodeMatrix {
    let n = matrix.node_count();
    debug_assert_eq!(n, m.nodes());
    let mut out = NodeMatrix::zeros(n, m.dim());
    for u in 0..n as NodeId {
        for (v, w) in matrix.row(u) {
            let src = m.row(v);
            for (o, s) in out.row_mut(u).iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    out
}

/// Max-norm residual of the fixed-point equation; a converged result keeps
/// this at or below the method tolerance.
pub fn fixed_point_residual(
    matrix: &TransitionMatrix,
    e0: &NodeMatrix,
    rows: &NodeMatrix,
    alpha: f64,
) -> f64 {
    let propagated = apply_transition(matrix, rows);
    let mut worst = 0.0f64;
    for u in 0..rows.nodes() as NodeId {
        for ((e, p), z) in rows.row(u).iter().zip(propagated.row(u)).zip(e0.row(u)) {
            worst = worst.max((e - ((1.0 - alpha) * p + alpha * z)).abs());
        }
    }
    worst
}

fn check_inputs(matrix: &TransitionMatrix, e0: &NodeMatrix, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    if e0.nodes() != matrix.node_count() {
        return Err(Error::DimensionMismatch {
            expected: matrix.node_count(),
            found: e0.nodes(),
            context: "personalization rows vs graph nodes".into(),
        });
    }
    Ok(())
}

/// Solve `(I - (1 - a) A) E = a E0` directly with a dense LU factorization.
/// This is the reference implementation the iterative routes are checked
/// against; memory is quadratic in the node count, hence the size guard.
pub fn ppr_closed_form(
    matrix: &TransitionMatrix,
    e0: &NodeMatrix,
    alpha: f64,
) -> Result<DiffusedEmbeddings> {
    check_inputs(matrix, e0, alpha)?;
    let n = matrix.node_count();
    if n > CLOSED_FORM_NODE_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "closed-form solve supports at most {CLOSED_FORM_NODE_LIMIT} nodes, got {n}"
        )));
    }
    let mut system = nalgebra::DMatrix::<f64>::identity(n, n);
    for u in 0..n as NodeId {
        for (v, w) in matrix.row(u) {
            system[(u as usize, v as usize)] -= (1.0 - alpha) * w;
        }
    }
    let mut rhs = nalgebra::DMatrix::<f64>::zeros(n, e0.dim());
    for u in 0..n {
        for (d, value) in e0.row(u as NodeId).iter().enumerate() {
            rhs[(u, d)] = alpha * value;
        }
    }
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("diffusion system is singular".into()))?;
    let mut rows = NodeMatrix::zeros(n, e0.dim());
    for u in 0..n {
        for d in 0..e0.dim() {
            rows.row_mut(u as NodeId)[d] = solution[(u, d)];
        }
    }
    Ok(DiffusedEmbeddings {
        rows,
        alpha,
        method: DiffusionMethod::ClosedForm,
        rounds: 0,
    })
}

/// Synchronous power iteration `E(t) = (1 - a) A E(t-1) + a E0` starting at
/// `E0`, stopping once the max-norm update drops below `tol`.
pub fn ppr_synchronous(
    matrix: &TransitionMatrix,
    e0: &NodeMatrix,
    alpha: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<DiffusedEmbeddings> {
    sync_iterate(matrix, e0, None, alpha, tol, max_iterations).map(|(result, _)| result)
}

/// Synchronous iteration starting from `init` instead of the personalization
/// rows. The fixed point is unique, so a warm start changes the round count
/// but not the limit.
pub fn ppr_synchronous_from(
    matrix: &TransitionMatrix,
    e0: &NodeMatrix,
    init: &NodeMatrix,
    alpha: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<DiffusedEmbeddings> {
    sync_iterate(matrix, e0, Some(init), alpha, tol, max_iterations).map(|(result, _)| result)
}

fn sync_iterate(
    matrix: &TransitionMatrix,
    e0: &NodeMatrix,
    init: Option<&NodeMatrix>,
    alpha: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<(DiffusedEmbeddings, Vec<f64>)> {
    check_inputs(matrix, e0, alpha)?;
    if tol <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if let Some(init) = init {
        if init.nodes() != e0.nodes() || init.dim() != e0.dim() {
            return Err(Error::DimensionMismatch {
                expected: e0.nodes(),
                found: init.nodes(),
                context: "warm-start rows".into(),
            });
        }
    }
    let mut current = init.unwrap_or(e0).clone();
    let mut updates = Vec::new();
    for iteration in 1..=max_iterations {
        let mut next = apply_transition(matrix, &current);
        for (value, base) in next.data.iter_mut().zip(&e0.data) {
            *value = (1.0 - alpha) * *value + alpha * base;
        }
        let update = next.max_abs_diff(&current);
        updates.push(update);
        current = next;
        if update < tol {
            return Ok((
                DiffusedEmbeddings {
                    rows: current,
                    alpha,
                    method: DiffusionMethod::Synchronous,
                    rounds: iteration,
                },
                updates,
            ));
        }
    }
    Err(Error::NonConvergence {
        rounds: max_iterations,
        residual: updates.last().copied().unwrap_or(f64::INFINITY),
        trace: updates.iter().rev().take(8).rev().copied().collect(),
    })
}

/// One local update from a node's last-known neighbor summaries:
/// `e_u = (1 - a) * sum_v A(u, v) * table[v] + a * e0_u`, with unknown
/// neighbors contributing zero. An isolated node lands on `a * e0_u`.
pub fn ppr_async_step(
    matrix: &TransitionMatrix,
    u: NodeId,
    table: &NeighborTable,
    e0_row: &[f64],
    alpha: f64,
) -> Vec<f64> {
    let mut out: Vec<f64> = e0_row.iter().map(|v| alpha * v).collect();
    for (v, w) in matrix.row(u) {
        if let Some(row) = table.get(v) {
            let scale = (1.0 - alpha) * w;
            for (o, r) in out.iter_mut().zip(row) {
                *o += scale * r;
            }
        }
    }
    out
}

/// Contact schedule for the asynchronous gossip rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// Probability that a node initiates one contact in a tick.
    pub contact_probability: f64,
    /// Consecutive quiescent ticks required before declaring convergence.
    pub window: usize,
    /// Tick budget before giving up.
    pub max_ticks: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            contact_probability: 1.0,
            window: 5,
            max_ticks: 100_000,
        }
    }
}

/// Gossip result: converged summaries plus each node's final neighbor table.
#[derive(Debug, Clone)]
pub struct AsyncOutcome {
    pub embeddings: DiffusedEmbeddings,
    pub tables: Vec<NeighborTable>,
}

/// Run asynchronous gossip diffusion until every node's per-tick update
/// stays below `tol` for `schedule.window` consecutive ticks.
///
/// Each tick every node independently contacts one uniformly random neighbor
/// with probability `contact_probability`; the pair exchanges current
/// summaries and both immediately recompute their own. Events within a tick
/// are ordered by initiating node id, so the whole run is a pure function of
/// `(inputs, seed)`.
pub fn run_async_diffusion(
    matrix: &TransitionMatrix,
    e0: &NodeMatrix,
    alpha: f64,
    schedule: ScheduleConfig,
    tol: f64,
    seed: u64,
) -> Result<AsyncOutcome> {
    run_async_diffusion_from(matrix, e0, e0, alpha, schedule, tol, seed)
}

/// Asynchronous gossip with an explicit warm-start state (summaries begin at
/// `init` instead of `e0`). The fixed point does not depend on the start.
pub fn run_async_diffusion_from(
    matrix: &TransitionMatrix,
    e0: &NodeMatrix,
    init: &NodeMatrix,
    alpha: f64,
    schedule: ScheduleConfig,
    tol: f64,
    seed: u64,
) -> Result<AsyncOutcome> {
    check_inputs(matrix, e0, alpha)?;
    if tol <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if !(schedule.contact_probability > 0.0 && schedule.contact_probability <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "contact probability must lie in (0, 1], got {}",
            schedule.contact_probability
        )));
    }
    if schedule.window == 0 {
        return Err(Error::InvalidParameter(
            "convergence window must be at least 1".into(),
        ));
    }
    if init.nodes() != e0.nodes() || init.dim() != e0.dim() {
        return Err(Error::DimensionMismatch {
            expected: e0.nodes(),
            found: init.nodes(),
            context: "warm-start rows".into(),
        });
    }

    let graph = matrix.graph();
    let n = graph.node_count();
    let dim = e0.dim();
    let mut rows = init.clone();
    let mut tables: Vec<NeighborTable> = (0..n as NodeId)
        .map(|u| NeighborTable::new(graph.neighbors(u).to_vec(), dim))
        .collect();
    let mut rng: ChaCha8Rng = derived_rng(seed, &[0xd1ff_u64]);
    let mut quiescent_ticks = 0usize;
    let mut recent = std::collections::VecDeque::with_capacity(schedule.window);

    for tick in 1..=schedule.max_ticks {
        let mut tick_update = 0.0f64;
        for u in 0..n as NodeId {
            if !rng.gen_bool(schedule.contact_probability) {
                continue;
            }
            let degree = graph.degree(u);
            if degree > 0 {
                let v = graph.neighbors(u)[rng.gen_range(0..degree)];
                tables[u as usize].set(v, rows.row(v));
                tables[v as usize].set(u, rows.row(u));
                tick_update = tick_update.max(local_step(matrix, u, &tables, &mut rows, e0, alpha));
                tick_update = tick_update.max(local_step(matrix, v, &tables, &mut rows, e0, alpha));
            } else {
                tick_update = tick_update.max(local_step(matrix, u, &tables, &mut rows, e0, alpha));
            }
        }
        if recent.len() == schedule.window {
            recent.pop_front();
        }
        recent.push_back(tick_update);
        if tick_update < tol {
            quiescent_ticks += 1;
            if quiescent_ticks >= schedule.window {
                return Ok(AsyncOutcome {
                    embeddings: DiffusedEmbeddings {
                        rows,
                        alpha,
                        method: DiffusionMethod::Asynchronous,
                        rounds: tick,
                    },
                    tables,
                });
            }
        } else {
            quiescent_ticks = 0;
        }
    }
    Err(Error::NonConvergence {
        rounds: schedule.max_ticks,
        residual: recent.back().copied().unwrap_or(f64::INFINITY),
        trace: recent.into_iter().collect(),
    })
}

fn local_step(
    matrix: &TransitionMatrix,
    u: NodeId,
    tables: &[NeighborTable],
    rows: &mut NodeMatrix,
    e0: &NodeMatrix,
    alpha: f64,
) -> f64 {
    let updated = ppr_async_step(matrix, u, &tables[u as usize], e0.row(u), alpha);
    let row = rows.row_mut(u);
    let mut delta = 0.0f64;
    for (current, next) in row.iter_mut().zip(&updated) {
        delta = delta.max((*current - next).abs());
        *current = *next;
    }
    delta
}

/// Method selection plus convergence knobs for a diffusion run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionSettings {
    pub method: DiffusionMethod,
    pub tolerance: f64,
    pub schedule: ScheduleConfig,
    /// Iteration budget for the synchronous method.
    pub max_iterations: usize,
}

impl Default for DiffusionSettings {
    fn default() -> Self {
        Self {
            method: DiffusionMethod::Asynchronous,
            tolerance: 1e-6,
            schedule: ScheduleConfig::default(),
            max_iterations: 10_000,
        }
    }
}

/// Dispatch a diffusion run. Asynchronous runs return the gossip tables;
/// for the exact methods the caller is expected to derive perfect tables
/// from the returned rows. `warm_start` seeds the iterative methods with a
/// previously converged state (closed form ignores it — a direct solve has
/// no iteration to shorten).
pub fn diffuse(
    matrix: &TransitionMatrix,
    e0: &NodeMatrix,
    alpha: f64,
    settings: &DiffusionSettings,
    warm_start: Option<&NodeMatrix>,
    seed: u64,
) -> Result<(DiffusedEmbeddings, Option<Vec<NeighborTable>>)> {
    match settings.method {
        DiffusionMethod::ClosedForm => Ok((ppr_closed_form(matrix, e0, alpha)?, None)),
        DiffusionMethod::Synchronous => Ok((
            sync_iterate(
                matrix,
                e0,
                warm_start,
                alpha,
                settings.tolerance,
                settings.max_iterations,
            )?
            .0,
            None,
        )),
        DiffusionMethod::Asynchronous => {
            let outcome = run_async_diffusion_from(
                matrix,
                e0,
                warm_start.unwrap_or(e0),
                alpha,
                settings.schedule,
                settings.tolerance,
                seed,
            )?;
            Ok((outcome.embeddings, Some(outcome.tables)))
        }
    }
}

/// Write converged summaries as a plain text matrix dump. The float
/// formatting is shortest-roundtrip, so loading restores identical bits.
pub fn save_embeddings(diffused: &DiffusedEmbeddings, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(to_io)?;
    let mut out = BufWriter::new(file);
    let rows = &diffused.rows;
    writeln!(
        out,
        "pprsim-embeddings 1 {} {} {} {} {}",
        rows.nodes(),
        rows.dim(),
        diffused.alpha,
        diffused.method,
        diffused.rounds
    )
    .map_err(to_io)?;
    for u in 0..rows.nodes() as NodeId {
        let line = rows
            .row(u)
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(out, "{line}").map_err(to_io)?;
    }
    out.flush().map_err(to_io)
}

/// Load a matrix dump produced by [`save_embeddings`].
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<DiffusedEmbeddings> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty embeddings file".into()))?;
    let header = header.map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 7 || fields[0] != "pprsim-embeddings" || fields[1] != "1" {
        return Err(parse_err(1, "not a pprsim embeddings dump".into()));
    }
    let nodes: usize = fields[2]
        .parse()
        .map_err(|e| parse_err(1, format!("bad node count: {e}")))?;
    let dim: usize = fields[3]
        .parse()
        .map_err(|e| parse_err(1, format!("bad dimension: {e}")))?;
    let alpha: f64 = fields[4]
        .parse()
        .map_err(|e| parse_err(1, format!("bad alpha: {e}")))?;
    let method: DiffusionMethod = fields[5].parse()?;
    let rounds: usize = fields[6]
        .parse()
        .map_err(|e| parse_err(1, format!("bad round count: {e}")))?;

    let mut rows = NodeMatrix::zeros(nodes, dim);
    let mut filled = 0usize;
    for (idx, line) in lines {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if filled == nodes {
            return Err(parse_err(idx + 1, "more rows than declared".into()));
        }
        let row = rows.row_mut(filled as NodeId);
        let mut count = 0usize;
        for field in line.split_whitespace() {
            if count == dim {
                return Err(parse_err(idx + 1, "more components than declared".into()));
            }
            row[count] = field
                .parse()
                .map_err(|e| parse_err(idx + 1, format!("bad component {field:?}: {e}")))?;
            count += 1;
        }
        if count != dim {
            return Err(parse_err(
                idx + 1,
                format!("expected {dim} components, found {count}"),
            ));
        }
        filled += 1;
    }
    if filled != nodes {
        return Err(parse_err(
            filled + 2,
            format!("expected {nodes} rows, found {filled}"),
        ));
    }
    Ok(DiffusedEmbeddings {
        rows,
        alpha,
        method,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_connected, NormalizationMode};
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    fn matrix_of(
        graph: OverlayGraph,
        mode: NormalizationMode,
    ) -> TransitionMatrix {
        TransitionMatrix::new(Arc::new(graph), mode)
    }

    fn single_edge() -> TransitionMatrix {
        matrix_of(
            OverlayGraph::from_dense_edges(2, [(0, 1)]).unwrap(),
            NormalizationMode::ColumnStochastic,
        )
    }

    fn delta_matrix(nodes: usize, at: NodeId, value: f64) -> NodeMatrix {
        let mut m = NodeMatrix::zeros(nodes, 1);
        m.row_mut(at)[0] = value;
        m
    }

    #[test]
    fn personalization_vector_sums_documents() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]);
        let b = EmbeddingVector::new(vec![0.0, 1.0]);
        let sum = personalization_vector(2, [&a, &b]).unwrap();
        assert_eq!(sum.components(), &[1.0, 1.0]);
        let empty = personalization_vector(3, []).unwrap();
        assert_eq!(empty.components(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn closed_form_on_single_edge_matches_hand_solution() {
        // (I - 0.5 A) E = 0.5 E0 with the swap operator A gives 2/3 and 1/3.
        let t = single_edge();
        let e0 = delta_matrix(2, 0, 1.0);
        let result = ppr_closed_form(&t, &e0, 0.5).unwrap();
        assert!((result.rows.row(0)[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((result.rows.row(1)[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_one_returns_personalization_for_all_methods() {
        let t = single_edge();
        let e0 = delta_matrix(2, 0, 3.5);
        let closed = ppr_closed_form(&t, &e0, 1.0).unwrap();
        assert!(closed.rows.max_abs_diff(&e0) < 1e-12);
        let sync = ppr_synchronous(&t, &e0, 1.0, 1e-12, 10).unwrap();
        assert_eq!(sync.rounds, 1);
        assert!(sync.rows.max_abs_diff(&e0) < 1e-15);
        let gossip =
            run_async_diffusion(&t, &e0, 1.0, ScheduleConfig::default(), 1e-12, 7).unwrap();
        assert!(gossip.embeddings.rows.max_abs_diff(&e0) < 1e-15);
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        let t = single_edge();
        let e0 = delta_matrix(2, 0, 1.0);
        assert!(ppr_closed_form(&t, &e0, 0.0).is_err());
        assert!(ppr_closed_form(&t, &e0, 1.5).is_err());
        assert!(ppr_synchronous(&t, &e0, -0.1, 1e-9, 10).is_err());
    }

    #[test]
    fn synchronous_matches_closed_form_on_random_graphs() {
        for seed in 0..5 {
            let t = matrix_of(
                random_connected(50, 60, seed).unwrap(),
                NormalizationMode::ColumnStochastic,
            );
            let mut e0 = NodeMatrix::zeros(50, 4);
            let mut rng = crate::rng::derived_rng(seed, &[99]);
            for u in 0..50 {
                for d in 0..4 {
                    e0.row_mut(u)[d] = rng.gen_range(-1.0..1.0);
                }
            }
            for alpha in [0.1, 0.5, 0.9] {
                let exact = ppr_closed_form(&t, &e0, alpha).unwrap();
                let iterated = ppr_synchronous(&t, &e0, alpha, 1e-12, 5_000).unwrap();
                assert!(
                    exact.rows.max_abs_diff(&iterated.rows) < 1e-8,
                    "alpha={alpha} seed={seed}"
                );
            }
        }
    }

    #[test]
    fn synchronous_updates_contract_geometrically_in_l1() {
        // With a column-stochastic operator each update shrinks by at least
        // (1 - alpha) in the per-dimension L1 norm; verify step ratios.
        let t = matrix_of(
            random_connected(30, 40, 3).unwrap(),
            NormalizationMode::ColumnStochastic,
        );
        let alpha = 0.3;
        let e0 = delta_matrix(30, 7, 1.0);
        let mut previous = e0.clone();
        let mut last_l1: Option<f64> = None;
        for _ in 0..40 {
            let mut next = apply_transition(&t, &previous);
            for (value, base) in next.data.iter_mut().zip(&e0.data) {
                *value = (1.0 - alpha) * *value + alpha * base;
            }
            let l1: f64 = next
                .data
                .iter()
                .zip(&previous.data)
                .map(|(a, b)| (a - b).abs())
                .sum();
            if let Some(prev) = last_l1 {
                assert!(l1 <= (1.0 - alpha) * prev * (1.0 + 1e-9), "{l1} vs {prev}");
            }
            last_l1 = Some(l1);
            previous = next;
        }
    }

    #[test]
    fn synchronous_reports_non_convergence_with_residual() {
        let t = single_edge();
        let e0 = delta_matrix(2, 0, 1.0);
        match ppr_synchronous(&t, &e0, 0.1, 1e-14, 3) {
            Err(Error::NonConvergence {
                rounds,
                residual,
                trace,
            }) => {
                assert_eq!(rounds, 3);
                assert!(residual > 0.0);
                assert_eq!(trace.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn async_step_on_isolated_node_is_scaled_personalization() {
        let t = matrix_of(
            OverlayGraph::from_dense_edges(3, [(0, 1)]).unwrap(),
            NormalizationMode::ColumnStochastic,
        );
        let table = NeighborTable::new(vec![], 2);
        let stepped = ppr_async_step(&t, 2, &table, &[1.0, -2.0], 0.3);
        assert_eq!(stepped, vec![0.3, -0.6]);
        // A second step from the same state is a fixed point.
        let again = ppr_async_step(&t, 2, &table, &[1.0, -2.0], 0.3);
        assert_eq!(stepped, again);
    }

    #[test]
    fn async_step_treats_missing_neighbors_as_zero() {
        let t = single_edge();
        let table = NeighborTable::new(vec![1], 1);
        let fresh = ppr_async_step(&t, 0, &table, &[2.0], 0.5);
        assert_eq!(fresh, vec![1.0]);
        let mut table = table;
        table.set(1, &[4.0]);
        let informed = ppr_async_step(&t, 0, &table, &[2.0], 0.5);
        assert_eq!(informed, vec![3.0]);
    }

    #[test]
    fn fair_round_robin_gossip_reaches_the_closed_form_fixed_point() {
        // Drive the async step with a deterministic schedule: every round
        // each node exchanges with all neighbors in order, then updates.
        let graph = OverlayGraph::from_dense_edges(
            10,
            (0..10u32).map(|u| (u, (u + 1) % 10)),
        )
        .unwrap();
        let t = matrix_of(graph, NormalizationMode::ColumnStochastic);
        let graph = t.graph_arc();
        let alpha = 0.5;
        let mut e0 = NodeMatrix::zeros(10, 2);
        e0.row_mut(0).copy_from_slice(&[1.0, -0.5]);
        e0.row_mut(4).copy_from_slice(&[0.0, 2.0]);

        let mut rows = e0.clone();
        let mut tables: Vec<NeighborTable> = (0..10u32)
            .map(|u| NeighborTable::new(graph.neighbors(u).to_vec(), 2))
            .collect();
        for _round in 0..200 {
            for u in 0..10u32 {
                for &v in graph.neighbors(u) {
                    let row = rows.row(v).to_vec();
                    tables[u as usize].set(v, &row);
                }
                let updated = ppr_async_step(&t, u, &tables[u as usize], e0.row(u), alpha);
                rows.row_mut(u).copy_from_slice(&updated);
            }
        }
        let exact = ppr_closed_form(&t, &e0, alpha).unwrap();
        assert!(exact.rows.max_abs_diff(&rows) < 1e-6);
    }

    #[test]
    fn random_gossip_matches_closed_form() {
        let t = matrix_of(
            random_connected(20, 25, 8).unwrap(),
            NormalizationMode::ColumnStochastic,
        );
        let mut e0 = NodeMatrix::zeros(20, 3);
        e0.row_mut(2).copy_from_slice(&[1.0, 0.25, -1.0]);
        e0.row_mut(11).copy_from_slice(&[-0.5, 2.0, 0.0]);
        let schedule = ScheduleConfig {
            contact_probability: 1.0,
            window: 3,
            max_ticks: 50_000,
        };
        for alpha in [0.2, 0.5, 0.9] {
            let gossip = run_async_diffusion(&t, &e0, alpha, schedule, 1e-10, 5).unwrap();
            let exact = ppr_closed_form(&t, &e0, alpha).unwrap();
            assert!(
                exact.rows.max_abs_diff(&gossip.embeddings.rows) < 1e-5,
                "alpha={alpha}"
            );
            assert!(fixed_point_residual(&t, &e0, &gossip.embeddings.rows, alpha) < 1e-5);
        }
    }

    #[test]
    fn gossip_is_deterministic_under_a_seed() {
        let t = matrix_of(
            random_connected(15, 10, 2).unwrap(),
            NormalizationMode::Symmetric,
        );
        let e0 = delta_matrix(15, 3, 2.0);
        let schedule = ScheduleConfig {
            contact_probability: 0.7,
            window: 4,
            max_ticks: 50_000,
        };
        let a = run_async_diffusion(&t, &e0, 0.4, schedule, 1e-9, 123).unwrap();
        let b = run_async_diffusion(&t, &e0, 0.4, schedule, 1e-9, 123).unwrap();
        assert_eq!(a.embeddings.rounds, b.embeddings.rounds);
        assert_eq!(a.embeddings.rows, b.embeddings.rows);
        let c = run_async_diffusion(&t, &e0, 0.4, schedule, 1e-9, 124).unwrap();
        assert!(
            a.embeddings.rounds != c.embeddings.rounds || a.embeddings.rows != c.embeddings.rows,
            "different seeds should produce different gossip schedules"
        );
    }

    #[test]
    fn gossip_reports_non_convergence_within_budget() {
        let t = single_edge();
        let e0 = delta_matrix(2, 0, 1.0);
        let schedule = ScheduleConfig {
            contact_probability: 1.0,
            window: 5,
            max_ticks: 2,
        };
        match run_async_diffusion(&t, &e0, 0.1, schedule, 1e-15, 1) {
            Err(Error::NonConvergence { rounds, trace, .. }) => {
                assert_eq!(rounds, 2);
                assert!(!trace.is_empty());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn mass_is_conserved_under_column_stochastic_diffusion() {
        let t = matrix_of(
            random_connected(40, 50, 4).unwrap(),
            NormalizationMode::ColumnStochastic,
        );
        let mut e0 = NodeMatrix::zeros(40, 2);
        e0.row_mut(1).copy_from_slice(&[0.7, -0.2]);
        e0.row_mut(30).copy_from_slice(&[1.1, 0.4]);
        let exact = ppr_closed_form(&t, &e0, 0.35).unwrap();
        let before = e0.dimension_totals();
        let after = exact.rows.dimension_totals();
        for (x, y) in before.iter().zip(&after) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn diffusion_is_linear_in_the_personalization() {
        let t = matrix_of(
            random_connected(25, 30, 6).unwrap(),
            NormalizationMode::ColumnStochastic,
        );
        let e1 = delta_matrix(25, 4, 1.0);
        let e2 = delta_matrix(25, 18, -0.7);
        let mut combined = NodeMatrix::zeros(25, 1);
        for u in 0..25u32 {
            combined.row_mut(u)[0] = e1.row(u)[0] + e2.row(u)[0];
        }
        let d1 = ppr_closed_form(&t, &e1, 0.4).unwrap();
        let d2 = ppr_closed_form(&t, &e2, 0.4).unwrap();
        let dc = ppr_closed_form(&t, &combined, 0.4).unwrap();
        for u in 0..25u32 {
            let sum = d1.rows.row(u)[0] + d2.rows.row(u)[0];
            assert!((dc.rows.row(u)[0] - sum).abs() < 1e-9);
        }
    }

    #[test]
    fn path_graph_summary_norm_decays_with_distance() {
        // Seed the midpoint of a path so every comparison is between nodes of
        // equal degree. (Seeding an endpoint breaks monotonicity at low alpha:
        // the degree-1 source sends *all* of its outflow to its degree-2
        // neighbour under column-stochastic weights, so the neighbour can
        // accumulate more mass than the source itself.)
        let n = 9usize;
        let mid = 4u32;
        let t = matrix_of(
            OverlayGraph::from_dense_edges(n, (0..n as u32 - 1).map(|u| (u, u + 1))).unwrap(),
            NormalizationMode::ColumnStochastic,
        );
        let e0 = delta_matrix(n, mid, 1.0);
        for alpha in [0.1, 0.5, 0.9] {
            let exact = ppr_closed_form(&t, &e0, alpha).unwrap();
            let norms: Vec<f64> = (0..n as u32).map(|u| exact.rows.row(u)[0].abs()).collect();
            for d in 0..4 {
                let (hi, lo) = (mid as usize, d);
                assert!(
                    norms[hi - lo] >= norms[hi - lo - 1] - 1e-12,
                    "alpha={alpha} norms={norms:?}"
                );
                assert!(
                    norms[hi + lo] >= norms[hi + lo + 1] - 1e-12,
                    "alpha={alpha} norms={norms:?}"
                );
            }
            // The profile is symmetric about the seeded midpoint.
            for d in 0..=4usize {
                assert!((norms[4 - d] - norms[4 + d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warm_start_converges_to_the_same_fixed_point_in_fewer_rounds() {
        let t = matrix_of(
            random_connected(40, 50, 21).unwrap(),
            NormalizationMode::ColumnStochastic,
        );
        let mut e0 = NodeMatrix::zeros(40, 3);
        let mut rng = crate::rng::derived_rng(21, &[7]);
        for u in 0..40 {
            for d in 0..3 {
                e0.row_mut(u)[d] = rng.gen_range(-1.0..1.0);
            }
        }
        let exact = ppr_closed_form(&t, &e0, 0.3).unwrap();

        let cold = ppr_synchronous(&t, &e0, 0.3, 1e-10, 5_000).unwrap();
        let warm = ppr_synchronous_from(&t, &e0, &exact.rows, 0.3, 1e-10, 5_000).unwrap();
        assert!(warm.rows.max_abs_diff(&exact.rows) < 1e-9);
        assert!(warm.rounds < cold.rounds);

        let schedule = ScheduleConfig::default();
        let cold_gossip = run_async_diffusion(&t, &e0, 0.3, schedule, 1e-10, 5).unwrap();
        let warm_gossip =
            run_async_diffusion_from(&t, &e0, &exact.rows, 0.3, schedule, 1e-10, 5).unwrap();
        assert!(warm_gossip.embeddings.rows.max_abs_diff(&exact.rows) < 1e-8);
        assert!(warm_gossip.embeddings.rounds <= cold_gossip.embeddings.rounds);

        let wrong_shape = NodeMatrix::zeros(39, 3);
        assert!(ppr_synchronous_from(&t, &e0, &wrong_shape, 0.3, 1e-10, 10).is_err());
    }

    #[test]
    fn path_graph_summary_decays_from_an_endpoint_source() {
        // Seeding an endpoint adds a boundary effect: the degree-1 source
        // sends its entire outflow to the degree-2 neighbour, and as alpha
        // shrinks the profile approaches the walk's stationary distribution
        // (proportional to degree), so the neighbour overtakes the source
        // (alpha=0.1 gives e_0≈0.2297 < e_1≈0.2882 on a 9-node path). The
        // decay is monotone from the first interior node at every alpha, and
        // over the whole chain once teleport outweighs the degree bump.
        let n = 9usize;
        let t = matrix_of(
            OverlayGraph::from_dense_edges(n, (0..n as u32 - 1).map(|u| (u, u + 1))).unwrap(),
            NormalizationMode::ColumnStochastic,
        );
        let e0 = delta_matrix(n, 0, 1.0);
        for alpha in [0.1, 0.5, 0.9] {
            let exact = ppr_closed_form(&t, &e0, alpha).unwrap();
            let norms: Vec<f64> = (0..n as u32).map(|u| exact.rows.row(u)[0].abs()).collect();
            for w in norms[1..].windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "alpha={alpha} norms={norms:?}");
            }
            if alpha >= 0.5 {
                assert!(norms[1] <= norms[0] + 1e-12, "alpha={alpha} norms={norms:?}");
            }
        }
    }

    #[test]
    fn heavier_teleport_keeps_the_source_closer_to_its_personalization() {
        let t = matrix_of(
            random_connected(12, 8, 9).unwrap(),
            NormalizationMode::ColumnStochastic,
        );
        let source = 5u32;
        let e0 = delta_matrix(12, source, 1.0);
        let mut last_ratio = f64::INFINITY;
        for alpha in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let exact = ppr_closed_form(&t, &e0, alpha).unwrap();
            let e_u = exact.rows.row(source)[0];
            let ratio = (e_u - alpha * 1.0).abs() / e_u.abs();
            assert!(ratio < last_ratio, "alpha={alpha}");
            last_ratio = ratio;
        }
    }

    #[test]
    fn embeddings_dump_roundtrips_exactly() {
        let t = single_edge();
        let e0 = delta_matrix(2, 0, 1.0);
        let diffused = ppr_closed_form(&t, &e0, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        save_embeddings(&diffused, &path).unwrap();
        let loaded = load_embeddings(&path).unwrap();
        assert_eq!(loaded.rows, diffused.rows);
        assert_eq!(loaded.alpha, diffused.alpha);
        assert_eq!(loaded.method, diffused.method);
        assert_eq!(loaded.rounds, diffused.rounds);
    }

    #[test]
    fn embeddings_loader_rejects_malformed_dumps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "not-a-dump 1 2 3\n").unwrap();
        assert!(load_embeddings(&path).is_err());
        std::fs::write(
            &path,
            "pprsim-embeddings 1 2 1 0.5 closed-form 0\n1.0\n",
        )
        .unwrap();
        assert!(load_embeddings(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn iterative_methods_agree_with_the_oracle(
            n in 3usize..30,
            extra in 0usize..30,
            seed in 0u64..200,
            alpha_step in 1u32..10,
        ) {
            let alpha = alpha_step as f64 / 10.0;
            let t = matrix_of(
                random_connected(n, extra, seed).unwrap(),
                NormalizationMode::ColumnStochastic,
            );
            let mut e0 = NodeMatrix::zeros(n, 2);
            let mut rng = crate::rng::derived_rng(seed, &[41]);
            for u in 0..n as NodeId {
                if rng.gen_bool(0.4) {
                    e0.row_mut(u)[0] = rng.gen_range(-1.0..1.0);
                    e0.row_mut(u)[1] = rng.gen_range(-1.0..1.0);
                }
            }
            let exact = ppr_closed_form(&t, &e0, alpha).unwrap();
            let sync = ppr_synchronous(&t, &e0, alpha, 1e-12, 20_000).unwrap();
            prop_assert!(exact.rows.max_abs_diff(&sync.rows) < 1e-8);
            let schedule = ScheduleConfig { contact_probability: 1.0, window: 4, max_ticks: 100_000 };
            let gossip = run_async_diffusion(&t, &e0, alpha, schedule, 1e-11, seed).unwrap();
            prop_assert!(exact.rows.max_abs_diff(&gossip.embeddings.rows) < 1e-6);
        }
    }
}
