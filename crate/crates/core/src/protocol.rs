//! Query routing: biased random walks over diffused summaries.
//!
//! A query is a message carrying the query embedding, a TTL, and the best
//! results found so far. Each node that receives it scores its own documents
//! into the result set, then forwards the message to the neighbors whose
//! last-gossiped summaries look most similar to the query. Per-query traffic
//! memory steers the walk away from neighbors it already came from or sent
//! to; when the TTL runs out the message backtracks along the recorded
//! reverse path to the origin, erasing that memory on the way.
//!
//! Messages deliberately carry no global visited set: a node only ever
//! learns which neighbor handed it the query, not where else it has been.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NeighborTable;
use crate::embeddings::{dot, score, DocId, EmbeddingVector};
use crate::error::Result;
use crate::graph::NodeId;

/// Identifier shared by every message belonging to one query.
pub type QueryId = u64;

/// One scored document in a query's running result set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub doc: DocId,
    pub holder: NodeId,
    pub score: f64,
}

/// The message a walk carries. `reverse_path` records the forwarding chain
/// so the final result set can travel back without any routing state at the
/// intermediate nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryMessage {
    pub query_id: QueryId,
    pub embedding: EmbeddingVector,
    pub ttl: u32,
    pub k: usize,
    pub walks: usize,
    pub results: Vec<SearchResult>,
    pub reverse_path: Vec<NodeId>,
}

impl QueryMessage {
    pub fn new(
        query_id: QueryId,
        embedding: EmbeddingVector,
        ttl: u32,
        k: usize,
        walks: usize,
    ) -> Self {
        Self {
            query_id,
            embedding,
            ttl,
            k,
            walks,
            results: Vec::new(),
            reverse_path: Vec::new(),
        }
    }
}

/// What a node decides to do with a query it just processed.
#[derive(Debug, Clone)]
pub enum ForwardDecision {
    /// Send a copy of the message to each target neighbor.
    Forward {
        targets: Vec<NodeId>,
        message: QueryMessage,
    },
    /// Walk over; hand the message back along the reverse path.
    Backtrack { to: NodeId, message: QueryMessage },
    /// The reverse path is exhausted: the results are home.
    Delivered { message: QueryMessage },
}

/// Per-node protocol state: local documents, the last-known neighbor
/// summaries, and which neighbors each live query has already touched.
#[derive(Debug, Clone)]
pub struct NodeState {
    id: NodeId,
    documents: Vec<(DocId, EmbeddingVector)>,
    table: NeighborTable,
    traffic: HashMap<QueryId, Vec<NodeId>>,
}

impl NodeState {
    pub fn new(id: NodeId, table: NeighborTable) -> Self {
        Self {
            id,
            documents: Vec::new(),
            table,
            traffic: HashMap::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn add_document(&mut self, doc: DocId, embedding: EmbeddingVector) {
        self.documents.push((doc, embedding));
    }

    pub fn documents(&self) -> &[(DocId, EmbeddingVector)] {
        &self.documents
    }

    pub fn table(&self) -> &NeighborTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut NeighborTable {
        &mut self.table
    }

    /// Mark `node` as already involved in `query` (came from or sent to).
    pub fn remember(&mut self, query: QueryId, node: NodeId) {
        let seen = self.traffic.entry(query).or_default();
        if !seen.contains(&node) {
            seen.push(node);
        }
    }

    /// Neighbors this node already exchanged `query` with.
    pub fn remembered(&self, query: QueryId) -> &[NodeId] {
        self.traffic.get(&query).map_or(&[], Vec::as_slice)
    }

    /// Drop the memory for `query`; called as its backtrack passes through.
    pub fn clear_traffic(&mut self, query: QueryId) {
        self.traffic.remove(&query);
    }

    /// Number of queries with live traffic memory at this node.
    pub fn live_queries(&self) -> usize {
        self.traffic.len()
    }
}

/// Collapse `results` to the best entry per document and keep the `k` best
/// overall: score descending, smaller document id first on ties.
pub fn merge_results(results: &mut Vec<SearchResult>, k: usize) {
    results.sort_by(|a, b| a.doc.cmp(&b.doc).then(b.score.total_cmp(&a.score)));
    results.dedup_by_key(|r| r.doc);
    results.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc)));
    results.truncate(k);
}

/// Score the node's documents into the message's running top-`k` result set.
pub fn evaluate_local(state: &NodeState, msg: &mut QueryMessage) -> Result<()> {
    for (doc, embedding) in state.documents() {
        let value = score(&msg.embedding, embedding)?;
        msg.results.push(SearchResult {
            doc: *doc,
            holder: state.id(),
            score: value,
        });
    }
    merge_results(&mut msg.results, msg.k);
    Ok(())
}

/// Neighbors eligible for the next hop, in three tiers: untouched neighbors
/// first; failing that, anyone except the neighbor the query arrived from;
/// failing that (degree one), bounce it straight back.
pub fn candidate_next_hops(
    state: &NodeState,
    query: QueryId,
    arrival: Option<NodeId>,
) -> Vec<NodeId> {
    let neighbors = state.table().neighbors();
    let remembered = state.remembered(query);
    let fresh: Vec<NodeId> = neighbors
        .iter()
        .copied()
        .filter(|v| Some(*v) != arrival && !remembered.contains(v))
        .collect();
    if !fresh.is_empty() {
        return fresh;
    }
    let onward: Vec<NodeId> = neighbors
        .iter()
        .copied()
        .filter(|v| Some(*v) != arrival)
        .collect();
    if !onward.is_empty() {
        return onward;
    }
    match arrival {
        Some(from) if neighbors.contains(&from) => vec![from],
        _ => Vec::new(),
    }
}

/// Pick the `walks` candidates whose last-known summaries score highest
/// against the query. A neighbor that never gossiped scores zero. Ties are
/// broken uniformly at random: the candidate order is shuffled first and the
/// sort is stable.
pub fn select_next_hops(
    candidates: &[NodeId],
    table: &NeighborTable,
    query: &EmbeddingVector,
    walks: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<NodeId> {
    debug_assert!(walks >= 1);
    let mut order = candidates.to_vec();
    order.shuffle(rng);
    let mut scored: Vec<(NodeId, f64)> = order
        .into_iter()
        .map(|v| {
            let s = table
                .get(v)
                .map_or(0.0, |row| dot(query.components(), row));
            (v, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(walks.max(1));
    scored.into_iter().map(|(v, _)| v).collect()
}

/// Process a query arriving at (or starting from) this node.
///
/// Arrival bookkeeping runs first: the sender is remembered and the TTL is
/// decremented — the origin itself receives the query from nobody and pays
/// no TTL, so a budget of `t` buys exactly `t` forward transmissions per
/// walk. The node then evaluates its own documents (an exhausted message
/// still gets evaluated before it turns around) and either forwards along
/// the most promising neighbors or begins the backtrack.
pub fn handle_query(
    state: &mut NodeState,
    mut msg: QueryMessage,
    arrival: Option<NodeId>,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardDecision> {
    if let Some(from) = arrival {
        state.remember(msg.query_id, from);
        msg.ttl -= 1;
    }
    evaluate_local(state, &mut msg)?;
    if msg.ttl == 0 {
        return Ok(turn_back(state, msg));
    }
    let candidates = candidate_next_hops(state, msg.query_id, arrival);
    if candidates.is_empty() {
        return Ok(turn_back(state, msg));
    }
    let targets = select_next_hops(&candidates, state.table(), &msg.embedding, msg.walks, rng);
    msg.reverse_path.push(state.id());
    for &target in &targets {
        state.remember(msg.query_id, target);
    }
    Ok(ForwardDecision::Forward {
        targets,
        message: msg,
    })
}

/// Relay a backtracking message one step further toward the origin,
/// erasing this node's traffic memory for the query as it passes.
pub fn handle_response(state: &mut NodeState, msg: QueryMessage) -> ForwardDecision {
    turn_back(state, msg)
}

fn turn_back(state: &mut NodeState, mut msg: QueryMessage) -> ForwardDecision {
    state.clear_traffic(msg.query_id);
    match msg.reverse_path.pop() {
        Some(to) => ForwardDecision::Backtrack { to, message: msg },
        None => ForwardDecision::Delivered { message: msg },
    }
}
