//! Discrete-event simulation of search scenarios and the two experiments.
//!
//! A scenario is one population of the network: documents placed on nodes,
//! summaries diffused, then one or more queries walked to completion. The
//! event loop is a synchronous tick queue — every in-flight message advances
//! one hop per tick, deliveries within a tick are processed in a canonical
//! order, and all randomness comes from seeds derived per purpose — so every
//! run is a pure function of its inputs and seed, including under rayon.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentKind, RunConfig};
use crate::diffusion::{diffuse, NeighborTable, NodeMatrix};
use crate::embeddings::{DocId, EmbeddingVector, RetrievalDataset};
use crate::error::{Error, Result};
use crate::graph::{NodeId, TransitionMatrix};
use crate::protocol::{
    handle_query, handle_response, merge_results, ForwardDecision, NodeState, QueryId,
    QueryMessage, SearchResult,
};
use crate::report::{AccuracyCell, AccuracyReport, HopReport, HopRow, Report};
use crate::rng::{derive_seed, derived_rng};

const DIFFUSION_TAG: u64 = 0xd1f5;
const TIES_TAG: u64 = 0x71e5;
const DRAWS_TAG: u64 = 0xd0aa;
const SCENARIO_TAG: u64 = 0x5ce0;
const ACCURACY_TAG: u64 = 0xacc0;
const HOPS_TAG: u64 = 0x40b5;

/// Draw one uniformly random holder node per document.
pub fn place_documents(node_count: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<NodeId> {
    (0..count)
        .map(|_| rng.gen_range(0..node_count) as NodeId)
        .collect()
}

/// One fully specified network population plus query parameters.
#[derive(Debug, Clone)]
pub struct Scenario<'a> {
    pub matrix: &'a TransitionMatrix,
    /// `(document id, embedding, holder node)` triples.
    pub documents: Vec<(DocId, EmbeddingVector, NodeId)>,
    pub query: EmbeddingVector,
    /// The document that counts as a hit.
    pub gold: DocId,
    pub ttl: u32,
    pub k: usize,
    pub walks: usize,
    pub alpha: f64,
    pub diffusion: crate::diffusion::DiffusionSettings,
    /// Previously converged summaries to seed the iterative diffusion
    /// methods with, shortening their convergence.
    pub warm_start: Option<&'a NodeMatrix>,
}

/// Outcome of one query issued in a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: QueryId,
    pub origin: NodeId,
    /// Hop distance the origin was sampled at, when the caller chose it by
    /// distance from the result holder.
    pub origin_radius: Option<u32>,
    /// Whether the sought document ended up in the delivered result set.
    pub success: bool,
    /// Hop count at which the walk first reached a node holding the sought
    /// document, if it ever did.
    pub first_hit_hop: Option<u32>,
    pub forward_transmissions: u32,
    pub backtrack_deliveries: u32,
    pub results: Vec<SearchResult>,
}

/// One processed delivery, for `--trace`-style debugging.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEvent {
    pub tick: u64,
    /// "query" or "response".
    pub kind: String,
    /// What the node decided: "forward", "backtrack" or "delivered".
    pub action: String,
    pub node: NodeId,
    pub from: Option<NodeId>,
    pub query_id: QueryId,
    pub ttl: u32,
    pub hop: u32,
    pub results: usize,
}

/// A [`TraceEvent`] tagged with the experiment coordinates it occurred at.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentTraceEvent {
    pub m: usize,
    pub alpha: f64,
    pub iteration: usize,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub records: Vec<QueryRecord>,
    pub ticks: u64,
    pub queue_drained: bool,
    /// Rounds the diffusion stage took to converge.
    pub diffusion_rounds: usize,
    pub trace: Vec<TraceEvent>,
}

enum Delivery {
    Query {
        to: NodeId,
        from: Option<NodeId>,
        msg: QueryMessage,
    },
    Response {
        to: NodeId,
        msg: QueryMessage,
    },
}

impl Delivery {
    /// Canonical within-tick processing order.
    fn order(&self) -> (NodeId, QueryId, u8, u64) {
        match self {
            Delivery::Query { to, from, msg } => (
                *to,
                msg.query_id,
                0,
                from.map_or(0, |f| u64::from(f) + 1),
            ),
            Delivery::Response { to, msg } => (*to, msg.query_id, 1, 0),
        }
    }
}

struct QueryProgress {
    outstanding: i64,
    results: Vec<SearchResult>,
    first_hit: Option<u32>,
    forwards: u32,
    backs: u32,
}

fn trace_event(
    tick: u64,
    kind: &str,
    node: NodeId,
    from: Option<NodeId>,
    decision: &ForwardDecision,
    initial_ttl: u32,
) -> TraceEvent {
    let (action, message) = match decision {
        ForwardDecision::Forward { message, .. } => ("forward", message),
        ForwardDecision::Backtrack { message, .. } => ("backtrack", message),
        ForwardDecision::Delivered { message } => ("delivered", message),
    };
    TraceEvent {
        tick,
        kind: kind.into(),
        action: action.into(),
        node,
        from,
        query_id: message.query_id,
        ttl: message.ttl,
        hop: initial_ttl - message.ttl,
        results: message.results.len(),
    }
}

/// Populate the network described by `scenario`, diffuse summaries, then
/// issue one query per `origins` entry (labelled with an optional radius)
/// and run the event loop until every message is resolved.
pub fn run_scenario(
    scenario: Scenario<'_>,
    origins: &[(NodeId, Option<u32>)],
    seed: u64,
    want_trace: bool,
) -> Result<ScenarioOutcome> {
    let matrix = scenario.matrix;
    let graph = matrix.graph();
    let n = graph.node_count();
    let dim = scenario.query.dim();
    if scenario.ttl == 0 {
        return Err(Error::InvalidParameter("ttl must be at least 1".into()));
    }
    for (origin, _) in origins {
        if !graph.contains(*origin) {
            return Err(Error::InvalidParameter(format!(
                "query origin {origin} is not in the graph"
            )));
        }
    }

    let mut e0 = NodeMatrix::zeros(n, dim);
    for (_, embedding, holder) in &scenario.documents {
        e0.add_to_row(*holder, embedding.components())?;
    }
    let (diffused, tables) = diffuse(
        matrix,
        &e0,
        scenario.alpha,
        &scenario.diffusion,
        scenario.warm_start,
        derive_seed(seed, &[DIFFUSION_TAG]),
    )?;
    let tables = match tables {
        Some(tables) => tables,
        None => (0..n as NodeId)
            .map(|u| NeighborTable::from_exact(graph, u, &diffused.rows))
            .collect(),
    };

    let mut states: Vec<NodeState> = tables
        .into_iter()
        .enumerate()
        .map(|(u, table)| NodeState::new(u as NodeId, table))
        .collect();
    let mut gold_holders = HashSet::new();
    for (doc, embedding, holder) in scenario.documents {
        if doc == scenario.gold {
            gold_holders.insert(holder);
        }
        states[holder as usize].add_document(doc, embedding);
    }

    let mut tie_rngs: Vec<ChaCha8Rng> = (0..origins.len())
        .map(|q| derived_rng(seed, &[TIES_TAG, q as u64]))
        .collect();
    let mut progress: Vec<QueryProgress> = origins
        .iter()
        .map(|_| QueryProgress {
            outstanding: 1,
            results: Vec::new(),
            first_hit: None,
            forwards: 0,
            backs: 0,
        })
        .collect();
    let mut queue: Vec<Delivery> = origins
        .iter()
        .enumerate()
        .map(|(q, (origin, _))| Delivery::Query {
            to: *origin,
            from: None,
            msg: QueryMessage::new(
                q as QueryId,
                scenario.query.clone(),
                scenario.ttl,
                scenario.k,
                scenario.walks,
            ),
        })
        .collect();

    let complete = |progress: &mut QueryProgress, message: QueryMessage, k: usize| {
        progress.results.extend(message.results);
        merge_results(&mut progress.results, k);
        progress.outstanding -= 1;
    };

    let mut ticks = 0u64;
    let mut trace = Vec::new();
    let budget = 2 * u64::from(scenario.ttl) + 8;
    while !queue.is_empty() {
        ticks += 1;
        if ticks > budget {
            return Err(Error::Numeric(format!(
                "event queue failed to drain within {budget} ticks"
            )));
        }
        queue.sort_by_key(Delivery::order);
        let current = std::mem::take(&mut queue);
        for delivery in current {
            match delivery {
                Delivery::Query { to, from, msg } => {
                    let q = msg.query_id as usize;
                    if from.is_some() {
                        progress[q].forwards += 1;
                    }
                    let hop = scenario.ttl - (msg.ttl - u32::from(from.is_some()));
                    if progress[q].first_hit.is_none() && gold_holders.contains(&to) {
                        progress[q].first_hit = Some(hop);
                    }
                    let decision =
                        handle_query(&mut states[to as usize], msg, from, &mut tie_rngs[q])?;
                    if want_trace {
                        trace.push(trace_event(ticks, "query", to, from, &decision, scenario.ttl));
                    }
                    match decision {
                        ForwardDecision::Forward { targets, message } => {
                            progress[q].outstanding += targets.len() as i64 - 1;
                            for target in targets {
                                queue.push(Delivery::Query {
                                    to: target,
                                    from: Some(to),
                                    msg: message.clone(),
                                });
                            }
                        }
                        ForwardDecision::Backtrack { to: next, message } => {
                            progress[q].backs += 1;
                            queue.push(Delivery::Response { to: next, msg: message });
                        }
                        ForwardDecision::Delivered { message } => {
                            complete(&mut progress[q], message, scenario.k);
                        }
                    }
                }
                Delivery::Response { to, msg } => {
                    let q = msg.query_id as usize;
                    let decision = handle_response(&mut states[to as usize], msg);
                    if want_trace {
                        trace.push(trace_event(ticks, "response", to, None, &decision, scenario.ttl));
                    }
                    match decision {
                        ForwardDecision::Backtrack { to: next, message } => {
                            progress[q].backs += 1;
                            queue.push(Delivery::Response { to: next, msg: message });
                        }
                        ForwardDecision::Delivered { message } => {
                            complete(&mut progress[q], message, scenario.k);
                        }
                        ForwardDecision::Forward { .. } => {
                            return Err(Error::Numeric(
                                "a backtracking message tried to forward".into(),
                            ));
                        }
                    }
                }
            }
        }
    }

    let mut records = Vec::with_capacity(origins.len());
    for ((q, (origin, radius)), p) in origins.iter().copied().enumerate().zip(progress) {
        if p.outstanding != 0 {
            return Err(Error::Numeric(format!(
                "query {q} finished with {} unresolved branches",
                p.outstanding
            )));
        }
        let success = p.results.iter().any(|r| r.doc == scenario.gold);
        records.push(QueryRecord {
            query_id: q as QueryId,
            origin,
            origin_radius: radius,
            success,
            first_hit_hop: p.first_hit,
            forward_transmissions: p.forwards,
            backtrack_deliveries: p.backs,
            results: p.results,
        });
    }
    Ok(ScenarioOutcome {
        records,
        ticks,
        queue_drained: true,
        diffusion_rounds: diffused.rounds,
        trace,
    })
}

/// Summary statistics over hop counts: median is the lower middle value,
/// the standard deviation is the population form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopStats {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn compute_stats(values: &[u32]) -> Result<HopStats> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot summarize an empty sample".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let len = sorted.len() as f64;
    let median = f64::from(sorted[(sorted.len() - 1) / 2]);
    let mean = sorted.iter().map(|&v| f64::from(v)).sum::<f64>() / len;
    let variance = sorted
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / len;
    Ok(HopStats {
        median,
        mean,
        std: variance.sqrt(),
    })
}

/// Graph and mined query/result pairs shared by every iteration of a run.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentInputs<'a> {
    pub matrix: &'a TransitionMatrix,
    pub dataset: &'a RetrievalDataset,
    /// Optional converged summaries every iteration's diffusion starts from.
    pub warm_start: Option<&'a NodeMatrix>,
}

struct CorpusDraw {
    documents: Vec<(DocId, EmbeddingVector, NodeId)>,
    query: EmbeddingVector,
    gold: DocId,
    gold_holder: NodeId,
}

/// Sample one iteration's corpus: a query/result pair plus `m - 1`
/// distractors, every document placed on a uniformly random node.
fn draw_corpus(
    inputs: &ExperimentInputs<'_>,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CorpusDraw> {
    let dataset = inputs.dataset;
    let pool = dataset.irrelevant_pool();
    if m - 1 > pool.len() {
        return Err(Error::Config(format!(
            "corpus size {m} needs {} distractors but the dataset offers only {}",
            m - 1,
            pool.len()
        )));
    }
    let qi = rng.gen_range(0..dataset.len());
    let picks = rand::seq::index::sample(rng, pool.len(), m - 1);
    let holders = place_documents(inputs.matrix.node_count(), m, rng);

    let gold = dataset.gold_token(qi);
    let mut documents = Vec::with_capacity(m);
    documents.push((gold, dataset.gold_embedding(qi), holders[0]));
    for (slot, pick) in picks.iter().enumerate() {
        let doc = pool[pick];
        documents.push((doc, dataset.store().embedding(doc), holders[slot + 1]));
    }
    Ok(CorpusDraw {
        documents,
        query: dataset.query_embedding(qi),
        gold,
        gold_holder: holders[0],
    })
}

fn check_corpus_fits(inputs: &ExperimentInputs<'_>, config: &RunConfig) -> Result<()> {
    let max_m = *config.m_list.iter().max().expect("validated non-empty");
    let pool = inputs.dataset.irrelevant_pool().len();
    if max_m - 1 > pool {
        return Err(Error::Config(format!(
            "corpus size {max_m} needs {} distractors but the dataset offers only {pool}; \
             lower the corpus sizes or mine fewer query pairs",
            max_m - 1
        )));
    }
    Ok(())
}

/// Converged summaries for iteration 0 of the run's first (m, alpha)
/// combination — the state dumped by `--save-embeddings` so later runs can
/// start their iterative diffusions from it. The seed chain matches what
/// that iteration derives internally, so for the gossip method the dump is
/// bitwise identical to the summaries the iteration itself computes.
pub fn warm_start_state(
    inputs: &ExperimentInputs<'_>,
    config: &RunConfig,
) -> Result<crate::diffusion::DiffusedEmbeddings> {
    config.validate()?;
    check_corpus_fits(inputs, config)?;
    let m = config.m_list[0];
    let alpha = config.alpha_list[0];
    let tag = match config.experiment {
        ExperimentKind::Accuracy => ACCURACY_TAG,
        ExperimentKind::Hops => HOPS_TAG,
    };
    let iteration_seed = derive_seed(config.seed, &[tag, m as u64, alpha.to_bits(), 0]);
    let mut rng = derived_rng(iteration_seed, &[DRAWS_TAG]);
    let draw = draw_corpus(inputs, m, &mut rng)?;
    let n = inputs.matrix.node_count();
    let mut e0 = NodeMatrix::zeros(n, inputs.dataset.store().dim());
    for (_, embedding, holder) in &draw.documents {
        e0.add_to_row(*holder, embedding.components())?;
    }
    let scenario_seed = derive_seed(iteration_seed, &[SCENARIO_TAG]);
    let (diffused, _) = diffuse(
        inputs.matrix,
        &e0,
        alpha,
        &config.diffusion,
        inputs.warm_start,
        derive_seed(scenario_seed, &[DIFFUSION_TAG]),
    )?;
    Ok(diffused)
}

fn accuracy_iteration(
    inputs: &ExperimentInputs<'_>,
    config: &RunConfig,
    m: usize,
    alpha: f64,
    iteration: usize,
    want_trace: bool,
) -> Result<(Vec<QueryRecord>, Vec<TraceEvent>)> {
    let iteration_seed = derive_seed(
        config.seed,
        &[ACCURACY_TAG, m as u64, alpha.to_bits(), iteration as u64],
    );
    let mut rng = derived_rng(iteration_seed, &[DRAWS_TAG]);
    let draw = draw_corpus(inputs, m, &mut rng)?;
    let distances = inputs.matrix.graph().bfs_distances(draw.gold_holder)?;
    let mut origins = Vec::new();
    for &radius in &config.radii {
        let ring: Vec<NodeId> = distances
            .iter()
            .enumerate()
            .filter_map(|(u, d)| (*d == Some(radius)).then_some(u as NodeId))
            .collect();
        if ring.is_empty() {
            continue;
        }
        origins.push((ring[rng.gen_range(0..ring.len())], Some(radius)));
    }
    let scenario = Scenario {
        matrix: inputs.matrix,
        documents: draw.documents,
        query: draw.query,
        gold: draw.gold,
        ttl: config.ttl,
        k: config.k,
        walks: config.walks,
        alpha,
        diffusion: config.diffusion,
        warm_start: inputs.warm_start,
    };
    let outcome = run_scenario(
        scenario,
        &origins,
        derive_seed(iteration_seed, &[SCENARIO_TAG]),
        want_trace,
    )?;
    Ok((outcome.records, outcome.trace))
}

fn hops_iteration(
    inputs: &ExperimentInputs<'_>,
    config: &RunConfig,
    m: usize,
    alpha: f64,
    iteration: usize,
    want_trace: bool,
) -> Result<(Vec<QueryRecord>, Vec<TraceEvent>)> {
    let iteration_seed = derive_seed(
        config.seed,
        &[HOPS_TAG, m as u64, alpha.to_bits(), iteration as u64],
    );
    let mut rng = derived_rng(iteration_seed, &[DRAWS_TAG]);
    let draw = draw_corpus(inputs, m, &mut rng)?;
    let n = inputs.matrix.node_count();
    let origins: Vec<(NodeId, Option<u32>)> = (0..config.queries_per_iter)
        .map(|_| (rng.gen_range(0..n) as NodeId, None))
        .collect();
    let scenario = Scenario {
        matrix: inputs.matrix,
        documents: draw.documents,
        query: draw.query,
        gold: draw.gold,
        ttl: config.ttl,
        k: config.k,
        walks: config.walks,
        alpha,
        diffusion: config.diffusion,
        warm_start: inputs.warm_start,
    };
    let outcome = run_scenario(
        scenario,
        &origins,
        derive_seed(iteration_seed, &[SCENARIO_TAG]),
        want_trace,
    )?;
    Ok((outcome.records, outcome.trace))
}

/// Run all iterations of one (m, alpha) combination: in parallel when no
/// trace is requested, serially (in iteration order) when it is.
fn run_combination<F>(
    iterations: usize,
    iteration_fn: F,
    m: usize,
    alpha: f64,
    trace: Option<&mut Vec<ExperimentTraceEvent>>,
) -> Result<Vec<Vec<QueryRecord>>>
where
    F: Fn(usize, bool) -> Result<(Vec<QueryRecord>, Vec<TraceEvent>)> + Sync,
{
    match trace {
        None => (0..iterations)
            .into_par_iter()
            .map(|iter| iteration_fn(iter, false).map(|(records, _)| records))
            .collect(),
        Some(sink) => {
            let mut all = Vec::with_capacity(iterations);
            for iter in 0..iterations {
                let (records, events) = iteration_fn(iter, true)?;
                sink.extend(events.into_iter().map(|event| ExperimentTraceEvent {
                    m,
                    alpha,
                    iteration: iter,
                    event,
                }));
                all.push(records);
            }
            Ok(all)
        }
    }
}

/// Hit accuracy by origin distance: for every corpus size and alpha, each
/// iteration draws a fresh corpus and placement, diffuses, and issues the
/// query from one origin per radius (radii with no nodes at that distance
/// contribute no sample).
pub fn run_accuracy_experiment(
    inputs: &ExperimentInputs<'_>,
    config: &RunConfig,
    mut trace: Option<&mut Vec<ExperimentTraceEvent>>,
) -> Result<Report> {
    config.validate()?;
    check_corpus_fits(inputs, config)?;
    let mut cells = Vec::new();
    for &m in &config.m_list {
        for &alpha in &config.alpha_list {
            let per_iteration = run_combination(
                config.iterations,
                |iter, want_trace| accuracy_iteration(inputs, config, m, alpha, iter, want_trace),
                m,
                alpha,
                trace.as_deref_mut(),
            )?;
            for &radius in &config.radii {
                let mut hits = 0u64;
                let mut samples = 0u64;
                for records in &per_iteration {
                    for record in records {
                        if record.origin_radius == Some(radius) {
                            samples += 1;
                            hits += u64::from(record.success);
                        }
                    }
                }
                cells.push(AccuracyCell {
                    m,
                    alpha,
                    radius,
                    hits,
                    samples,
                    accuracy: (samples > 0).then(|| hits as f64 / samples as f64),
                });
            }
        }
    }
    Ok(Report::Accuracy(AccuracyReport { cells }).rounded())
}

/// Hops until first hit: for every corpus size, each iteration draws one
/// corpus and issues the same query from `queries_per_iter` uniformly
/// random origins; hop statistics cover successful queries only.
pub fn run_hopcount_experiment(
    inputs: &ExperimentInputs<'_>,
    config: &RunConfig,
    mut trace: Option<&mut Vec<ExperimentTraceEvent>>,
) -> Result<Report> {
    config.validate()?;
    check_corpus_fits(inputs, config)?;
    let alpha = config.alpha_list[0];
    let mut rows = Vec::new();
    for &m in &config.m_list {
        let per_iteration = run_combination(
            config.iterations,
            |iter, want_trace| hops_iteration(inputs, config, m, alpha, iter, want_trace),
            m,
            alpha,
            trace.as_deref_mut(),
        )?;
        let mut success = 0u64;
        let mut total = 0u64;
        let mut hops: Vec<u32> = Vec::new();
        for records in &per_iteration {
            for record in records {
                total += 1;
                if record.success {
                    success += 1;
                    if let Some(hop) = record.first_hit_hop {
                        hops.push(hop);
                    }
                }
            }
        }
        let stats = if hops.is_empty() {
            None
        } else {
            Some(compute_stats(&hops)?)
        };
        rows.push(HopRow {
            m,
            success,
            total,
            median_hops: stats.map(|s| s.median),
            mean_hops: stats.map(|s| s.mean),
            std_hops: stats.map(|s| s.std),
        });
    }
    Ok(Report::Hops(HopReport { alpha, rows }).rounded())
}
