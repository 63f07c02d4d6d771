//! Run configuration: which experiment, over which graph and embeddings,
//! with which protocol and diffusion parameters.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSettings;
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::graph::{watts_strogatz, NormalizationMode, OverlayGraph};
use crate::rng::derive_seed;

/// The two reproducible experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Hit accuracy by query-origin distance from the result holder.
    Accuracy,
    /// Distribution of hops until the walk first reaches the result holder.
    Hops,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(ExperimentKind::Accuracy),
            "hops" => Ok(ExperimentKind::Hops),
            other => Err(Error::InvalidParameter(format!(
                "unknown experiment {other:?} (expected accuracy or hops)"
            ))),
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExperimentKind::Accuracy => "accuracy",
            ExperimentKind::Hops => "hops",
        })
    }
}

/// Where the overlay graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    /// Whitespace-separated edge list, `#` comments allowed.
    EdgeList { path: PathBuf },
    /// Small-world graph: ring of `nodes` with `degree` neighbors each and
    /// rewiring probability `rewire`.
    Synthetic {
        nodes: usize,
        degree: usize,
        rewire: f64,
    },
}

impl GraphSource {
    pub fn build(&self, seed: u64) -> Result<OverlayGraph> {
        match self {
            GraphSource::EdgeList { path } => OverlayGraph::load_edge_list(path),
            GraphSource::Synthetic {
                nodes,
                degree,
                rewire,
            } => watts_strogatz(*nodes, *degree, *rewire, derive_seed(seed, &[0x6e47])),
        }
    }
}

/// Where the word embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbeddingSource {
    /// Plain text vectors, one `token v1 .. vd` per line, optional
    /// `count dim` header.
    VectorFile {
        path: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
    /// Random unit vectors for `vocab` synthetic tokens.
    Synthetic { vocab: usize, dim: usize },
}

impl EmbeddingSource {
    pub fn build(&self, seed: u64) -> Result<Arc<EmbeddingStore>> {
        let store = match self {
            EmbeddingSource::VectorFile { path, limit } => {
                EmbeddingStore::load_vectors(path, *limit)?
            }
            EmbeddingSource::Synthetic { vocab, dim } => {
                EmbeddingStore::synthesize(*vocab, *dim, derive_seed(seed, &[0xe3b5]))?
            }
        };
        Ok(Arc::new(store))
    }
}

/// Complete, validated description of one experiment run. Serialize it and
/// you can reproduce the run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub graph: GraphSource,
    pub embeddings: EmbeddingSource,
    /// Corpus sizes: each experiment repeats per entry, placing one result
    /// document and `m - 1` distractors.
    pub m_list: Vec<usize>,
    /// Teleport weights to sweep.
    pub alpha_list: Vec<f64>,
    /// Origin distances sampled by the accuracy experiment.
    pub radii: Vec<u32>,
    pub iterations: usize,
    /// Query origins sampled per iteration (hops experiment).
    pub queries_per_iter: usize,
    /// Query/result pairs to mine from the embedding store.
    pub num_queries: usize,
    /// Minimum cosine similarity for a mined query/result pair.
    pub threshold: f64,
    pub ttl: u32,
    /// Result-set capacity carried by each query.
    pub k: usize,
    /// Parallel walks branched per forwarding step.
    pub walks: usize,
    pub seed: u64,
    pub normalization: NormalizationMode,
    pub diffusion: DiffusionSettings,
}

impl RunConfig {
    /// Canonical parameters for `kind`, matching the reference experiments.
    pub fn defaults(kind: ExperimentKind, graph: GraphSource, embeddings: EmbeddingSource) -> Self {
        let common = Self {
            experiment: kind,
            graph,
            embeddings,
            m_list: vec![10, 100, 1_000, 10_000],
            alpha_list: vec![0.1, 0.5, 0.9],
            radii: (1..=5).collect(),
            iterations: 200,
            queries_per_iter: 1,
            num_queries: 1_000,
            threshold: 0.6,
            ttl: 50,
            k: 1,
            walks: 1,
            seed: 42,
            normalization: NormalizationMode::ColumnStochastic,
            diffusion: DiffusionSettings::default(),
        };
        match kind {
            ExperimentKind::Accuracy => common,
            ExperimentKind::Hops => Self {
                alpha_list: vec![0.5],
                radii: Vec::new(),
                iterations: 500,
                queries_per_iter: 10,
                ..common
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(Error::Config(message));
        if self.m_list.is_empty() {
            return bad("m_list must not be empty".into());
        }
        if self.m_list.contains(&0) {
            return bad("every corpus size must be at least 1".into());
        }
        if self.alpha_list.is_empty() {
            return bad("alpha_list must not be empty".into());
        }
        for &alpha in &self.alpha_list {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return bad(format!("alpha must lie in (0, 1], got {alpha}"));
            }
        }
        if self.experiment == ExperimentKind::Hops && self.alpha_list.len() != 1 {
            return bad("the hops experiment sweeps corpus size, not alpha; give one alpha".into());
        }
        if self.experiment == ExperimentKind::Accuracy {
            if self.radii.is_empty() {
                return bad("the accuracy experiment needs at least one radius".into());
            }
            if self.radii.contains(&0) {
                return bad("radii must be at least 1".into());
            }
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.queries_per_iter == 0 {
            return bad("queries_per_iter must be at least 1".into());
        }
        if self.num_queries == 0 {
            return bad("num_queries must be at least 1".into());
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return bad(format!(
                "threshold is a cosine similarity in [-1, 1], got {}",
                self.threshold
            ));
        }
        if self.ttl == 0 {
            return bad("ttl must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.walks == 0 {
            return bad("walks must be at least 1".into());
        }
        // NaN must land in the error branch too, hence no plain `<= 0.0`.
        if self.diffusion.tolerance.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad(format!(
                "diffusion tolerance must be positive, got {}",
                self.diffusion.tolerance
            ));
        }
        Ok(())
    }
}
