//! `pprsim` — run decentralized-search experiments from the command line.
//!
//! The binary resolves a run configuration from three layers (built-in
//! defaults, an optional TOML config file, command-line flags — later layers
//! win), builds the overlay graph and embedding store, mines query/result
//! pairs, runs the selected experiment, and emits a report plus a manifest
//! that reproduces the run bit for bit.
//!
//! Exit codes: 0 on success, 1 for I/O and runtime failures, 2 for usage
//! errors (unknown flags, out-of-range values, malformed config files).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use clap::Parser;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use pprsim_core::config::{EmbeddingSource, ExperimentKind, GraphSource, RunConfig};
use pprsim_core::diffusion::{load_embeddings, save_embeddings, DiffusionMethod};
use pprsim_core::embeddings::RetrievalDataset;
use pprsim_core::graph::{NormalizationMode, TransitionMatrix};
use pprsim_core::report::{DatasetFingerprint, RunManifest};
use pprsim_core::rng::derive_seed;
use pprsim_core::simulator::{
    run_accuracy_experiment, run_hopcount_experiment, warm_start_state, ExperimentInputs,
    ExperimentTraceEvent,
};
use pprsim_core::Error as CoreError;

/// Seed tag for mining the query/result dataset from the embedding store.
const DATASET_TAG: u64 = 0xda7a;

#[derive(Parser, Debug)]
#[command(
    name = "pprsim",
    version,
    about = "Simulate decentralized content search over a peer-to-peer overlay",
    after_help = "Relative --graph/--vectors paths are resolved against \
                  $PPRSIM_DATA_DIR when it is set. A config file provides the \
                  middle layer of settings: defaults < file < flags."
)]
struct Cli {
    /// TOML config file applied between defaults and flags.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Experiment to run: "accuracy" (hit rate by origin distance) or
    /// "hops" (walk length until the first hit).
    #[arg(long, value_name = "KIND")]
    experiment: Option<String>,

    /// Overlay graph as a whitespace-separated edge list ('#' comments ok).
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic_nodes")]
    graph: Option<PathBuf>,

    /// Generate a small-world overlay with this many nodes instead of
    /// loading one.
    #[arg(long, value_name = "N")]
    synthetic_nodes: Option<usize>,

    /// Ring degree of the generated overlay.
    #[arg(long, value_name = "K", requires = "synthetic_nodes")]
    graph_degree: Option<usize>,

    /// Edge rewiring probability of the generated overlay.
    #[arg(long, value_name = "P", requires = "synthetic_nodes")]
    graph_rewire: Option<f64>,

    /// Word embeddings as text, one "token v1 .. vd" per line (an optional
    /// "count dim" header line is recognized).
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic_vocab")]
    vectors: Option<PathBuf>,

    /// Keep only the first N vectors of the file.
    #[arg(long, value_name = "N", requires = "vectors")]
    vectors_limit: Option<usize>,

    /// Generate N random unit vectors instead of loading a vector file.
    #[arg(long, value_name = "N")]
    synthetic_vocab: Option<usize>,

    /// Dimensionality of generated vectors.
    #[arg(long, value_name = "D", requires = "synthetic_vocab")]
    dim: Option<usize>,

    /// Corpus sizes to sweep, comma-separated (e.g. 10,100,1000).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    m: Option<Vec<usize>>,

    /// Teleport weights to sweep, comma-separated.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    alpha: Option<Vec<f64>>,

    /// Origin distances sampled by the accuracy experiment.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    radii: Option<Vec<u32>>,

    /// Hop budget carried by each query.
    #[arg(long, value_name = "T")]
    ttl: Option<u32>,

    /// Result-set capacity carried by each query.
    #[arg(long, value_name = "K")]
    k: Option<usize>,

    /// Parallel walks branched per forwarding step.
    #[arg(long, value_name = "W")]
    walks: Option<usize>,

    /// Corpus redraws per (m, alpha) combination.
    #[arg(long, value_name = "N")]
    iterations: Option<usize>,

    /// Query origins sampled per iteration (hops experiment).
    #[arg(long, value_name = "N")]
    queries_per_iter: Option<usize>,

    /// Query/result pairs to mine from the embedding store.
    #[arg(long, value_name = "N")]
    num_queries: Option<usize>,

    /// Minimum cosine similarity for a mined query/result pair.
    #[arg(long, value_name = "S", allow_negative_numbers = true)]
    threshold: Option<f64>,

    /// Base seed; every random choice in the run derives from it.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,

    /// Transition weighting: "column-stochastic" or "symmetric".
    #[arg(long, value_name = "MODE")]
    normalization: Option<String>,

    /// Summary computation: "closed-form", "synchronous" or "asynchronous".
    #[arg(long, value_name = "METHOD")]
    diffusion_method: Option<String>,

    /// Convergence tolerance for the iterative diffusion methods.
    #[arg(long, value_name = "TOL")]
    tolerance: Option<f64>,

    /// Write the report here (and its manifest next to it). Without --out
    /// the report goes to stdout and no manifest is written.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Report format; defaults to the --out extension, falling back to csv.
    #[arg(long, value_name = "FMT")]
    format: Option<String>,

    /// Write one JSON object per processed message here (runs iterations
    /// serially).
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,

    /// Dump the converged summaries of the run's first iteration to PATH
    /// and exit without running the experiment.
    #[arg(long, value_name = "PATH")]
    save_embeddings: Option<PathBuf>,

    /// Start every iterative diffusion from a previously dumped state.
    #[arg(long, value_name = "PATH")]
    load_embeddings: Option<PathBuf>,
}

/// Optional overrides read from the TOML config file. Field names mirror
/// the flags; `graph` and `embeddings` are tables.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePatch {
    experiment: Option<String>,
    graph: Option<GraphPatch>,
    embeddings: Option<EmbeddingsPatch>,
    m: Option<Vec<usize>>,
    alpha: Option<Vec<f64>>,
    radii: Option<Vec<u32>>,
    iterations: Option<usize>,
    queries_per_iter: Option<usize>,
    num_queries: Option<usize>,
    threshold: Option<f64>,
    ttl: Option<u32>,
    k: Option<usize>,
    walks: Option<usize>,
    seed: Option<u64>,
    normalization: Option<String>,
    diffusion_method: Option<String>,
    tolerance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphPatch {
    path: Option<PathBuf>,
    nodes: Option<usize>,
    degree: Option<usize>,
    rewire: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingsPatch {
    path: Option<PathBuf>,
    limit: Option<usize>,
    vocab: Option<usize>,
    dim: Option<usize>,
}

/// A failure routed to the right exit code.
#[derive(Debug)]
enum Failure {
    /// Bad input from the user: exit code 2.
    Usage(String),
    /// Everything else (I/O, non-convergence, ...): exit code 1.
    Runtime(String),
}

impl From<CoreError> for Failure {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::Config(_) | CoreError::InvalidParameter(_) => Failure::Usage(err.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn usage<T>(message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(message.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let patch = match &cli.config {
        Some(path) => read_patch(path)?,
        None => FilePatch::default(),
    };
    let config = resolve_config(&cli, patch)?;
    config.validate()?;

    eprintln!("building overlay graph...");
    let graph = config.graph.build(config.seed)?;
    eprintln!(
        "graph ready: {} nodes, {} edges",
        graph.node_count(),
        graph.edge_count()
    );
    let matrix = TransitionMatrix::new(Arc::new(graph), config.normalization);

    eprintln!("loading embeddings...");
    let store = config.embeddings.build(config.seed)?;
    eprintln!("embeddings ready: {} tokens, {} dims", store.len(), store.dim());

    eprintln!("mining {} query/result pairs...", config.num_queries);
    let dataset = RetrievalDataset::generate(
        Arc::clone(&store),
        config.num_queries,
        config.threshold,
        derive_seed(config.seed, &[DATASET_TAG]),
    )?;

    let warm = match &cli.load_embeddings {
        Some(path) => {
            let state = load_embeddings(path)?;
            if state.rows.nodes() != matrix.node_count() || state.rows.dim() != store.dim() {
                return usage(format!(
                    "warm-start dump is {}x{} but this run needs {}x{}",
                    state.rows.nodes(),
                    state.rows.dim(),
                    matrix.node_count(),
                    store.dim()
                ));
            }
            Some(state)
        }
        None => None,
    };
    let inputs = ExperimentInputs {
        matrix: &matrix,
        dataset: &dataset,
        warm_start: warm.as_ref().map(|state| &state.rows),
    };

    if let Some(path) = &cli.save_embeddings {
        eprintln!("computing warm-start summaries...");
        let state = warm_start_state(&inputs, &config)?;
        save_embeddings(&state, path)?;
        eprintln!(
            "saved {}x{} summaries after {} rounds to {}",
            state.rows.nodes(),
            state.rows.dim(),
            state.rounds,
            path.display()
        );
        return Ok(());
    }

    let mut trace_events: Vec<ExperimentTraceEvent> = Vec::new();
    let trace_sink = cli.trace.is_some().then_some(&mut trace_events);

    eprintln!("running {} experiment...", config.experiment);
    let report = match config.experiment {
        ExperimentKind::Accuracy => run_accuracy_experiment(&inputs, &config, trace_sink)?,
        ExperimentKind::Hops => run_hopcount_experiment(&inputs, &config, trace_sink)?,
    };

    if let Some(path) = &cli.trace {
        let mut lines = String::new();
        for event in &trace_events {
            let line = serde_json::to_string(event)
                .map_err(|e| Failure::Runtime(format!("trace serialization failed: {e}")))?;
            lines.push_str(&line);
            lines.push('\n');
        }
        write_file(path, &lines)?;
        eprintln!("wrote {} trace events to {}", trace_events.len(), path.display());
    }

    let format = resolve_format(&cli)?;
    let rendered = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json()?,
    };
    match &cli.out {
        Some(out) => {
            let datasets = fingerprints(&config, &cli)?;
            let manifest = RunManifest::new(config, datasets);
            let manifest_json = serde_json::to_string_pretty(&manifest)
                .map_err(|e| Failure::Runtime(format!("manifest serialization failed: {e}")))?;
            write_file(out, &rendered)?;
            let manifest_path = manifest_path_for(out);
            write_file(&manifest_path, &manifest_json)?;
            eprintln!("wrote {} and {}", out.display(), manifest_path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ReportFormat {
    Csv,
    Json,
}

fn resolve_format(cli: &Cli) -> Result<ReportFormat, Failure> {
    if let Some(name) = &cli.format {
        return match name.as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => usage(format!("unknown format {other:?} (expected csv or json)")),
        };
    }
    let by_extension = cli
        .out
        .as_ref()
        .and_then(|path| path.extension())
        .and_then(|ext| ext.to_str());
    Ok(match by_extension {
        Some("json") => ReportFormat::Json,
        _ => ReportFormat::Csv,
    })
}

/// `results.csv` -> `results.manifest.json`, `results` -> `results.manifest.json`.
fn manifest_path_for(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn read_patch(path: &Path) -> Result<FilePatch, Failure> {
    let text = fs::read_to_string(path).map_err(|e| {
        Failure::Runtime(format!("cannot read config file {}: {e}", path.display()))
    })?;
    toml::from_str(&text)
        .map_err(|e| Failure::Usage(format!("bad config file {}: {e}", path.display())))
}

/// Resolve a relative dataset path against $PPRSIM_DATA_DIR when set.
fn resolve_data_path(path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        return path;
    }
    match std::env::var_os("PPRSIM_DATA_DIR") {
        Some(root) if !root.is_empty() => Path::new(&root).join(path),
        _ => path,
    }
}

fn parse_normalization(name: &str) -> Result<NormalizationMode, Failure> {
    match name {
        "column-stochastic" => Ok(NormalizationMode::ColumnStochastic),
        "symmetric" => Ok(NormalizationMode::Symmetric),
        other => usage(format!(
            "unknown normalization {other:?} (expected column-stochastic or symmetric)"
        )),
    }
}

/// Layer defaults, the config file and flags into one validated RunConfig.
fn resolve_config(cli: &Cli, patch: FilePatch) -> Result<RunConfig, Failure> {
    let kind_name = cli.experiment.as_deref().or(patch.experiment.as_deref());
    let kind = match kind_name {
        Some(name) => ExperimentKind::from_str(name)?,
        None => ExperimentKind::Accuracy,
    };

    let graph = graph_source(cli, patch.graph)?;
    let embeddings = embedding_source(cli, patch.embeddings)?;
    let mut config = RunConfig::defaults(kind, graph, embeddings);

    // Config-file layer.
    if let Some(m) = patch.m {
        config.m_list = m;
    }
    if let Some(alpha) = patch.alpha {
        config.alpha_list = alpha;
    }
    if let Some(radii) = patch.radii {
        config.radii = radii;
    }
    if let Some(iterations) = patch.iterations {
        config.iterations = iterations;
    }
    if let Some(queries) = patch.queries_per_iter {
        config.queries_per_iter = queries;
    }
    if let Some(num_queries) = patch.num_queries {
        config.num_queries = num_queries;
    }
    if let Some(threshold) = patch.threshold {
        config.threshold = threshold;
    }
    if let Some(ttl) = patch.ttl {
        config.ttl = ttl;
    }
    if let Some(k) = patch.k {
        config.k = k;
    }
    if let Some(walks) = patch.walks {
        config.walks = walks;
    }
    if let Some(seed) = patch.seed {
        config.seed = seed;
    }
    if let Some(name) = patch.normalization {
        config.normalization = parse_normalization(&name)?;
    }
    if let Some(name) = patch.diffusion_method {
        config.diffusion.method = DiffusionMethod::from_str(&name)?;
    }
    if let Some(tolerance) = patch.tolerance {
        config.diffusion.tolerance = tolerance;
    }

    // Flag layer.
    if let Some(m) = &cli.m {
        config.m_list = m.clone();
    }
    if let Some(alpha) = &cli.alpha {
        config.alpha_list = alpha.clone();
    }
    if let Some(radii) = &cli.radii {
        config.radii = radii.clone();
    }
    if let Some(iterations) = cli.iterations {
        config.iterations = iterations;
    }
    if let Some(queries) = cli.queries_per_iter {
        config.queries_per_iter = queries;
    }
    if let Some(num_queries) = cli.num_queries {
        config.num_queries = num_queries;
    }
    if let Some(threshold) = cli.threshold {
        config.threshold = threshold;
    }
    if let Some(ttl) = cli.ttl {
        config.ttl = ttl;
    }
    if let Some(k) = cli.k {
        config.k = k;
    }
    if let Some(walks) = cli.walks {
        config.walks = walks;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(name) = &cli.normalization {
        config.normalization = parse_normalization(name)?;
    }
    if let Some(name) = &cli.diffusion_method {
        config.diffusion.method = DiffusionMethod::from_str(name)?;
    }
    if let Some(tolerance) = cli.tolerance {
        config.diffusion.tolerance = tolerance;
    }
    Ok(config)
}

fn graph_source(cli: &Cli, patch: Option<GraphPatch>) -> Result<GraphSource, Failure> {
    if let Some(path) = &cli.graph {
        return Ok(GraphSource::EdgeList {
            path: resolve_data_path(path.clone()),
        });
    }
    if let Some(nodes) = cli.synthetic_nodes {
        return Ok(GraphSource::Synthetic {
            nodes,
            degree: cli.graph_degree.unwrap_or(6),
            rewire: cli.graph_rewire.unwrap_or(0.1),
        });
    }
    if let Some(patch) = patch {
        return match (patch.path, patch.nodes) {
            (Some(_), Some(_)) => {
                usage("config [graph] sets both path and nodes; pick one source")
            }
            (Some(path), None) => Ok(GraphSource::EdgeList {
                path: resolve_data_path(path),
            }),
            (None, Some(nodes)) => Ok(GraphSource::Synthetic {
                nodes,
                degree: patch.degree.unwrap_or(6),
                rewire: patch.rewire.unwrap_or(0.1),
            }),
            (None, None) => usage("config [graph] needs either path or nodes"),
        };
    }
    Ok(GraphSource::Synthetic {
        nodes: 500,
        degree: 6,
        rewire: 0.1,
    })
}

fn embedding_source(cli: &Cli, patch: Option<EmbeddingsPatch>) -> Result<EmbeddingSource, Failure> {
    if let Some(path) = &cli.vectors {
        return Ok(EmbeddingSource::VectorFile {
            path: resolve_data_path(path.clone()),
            limit: cli.vectors_limit,
        });
    }
    if let Some(vocab) = cli.synthetic_vocab {
        return Ok(EmbeddingSource::Synthetic {
            vocab,
            dim: cli.dim.unwrap_or(64),
        });
    }
    if let Some(patch) = patch {
        return match (patch.path, patch.vocab) {
            (Some(_), Some(_)) => {
                usage("config [embeddings] sets both path and vocab; pick one source")
            }
            (Some(path), None) => Ok(EmbeddingSource::VectorFile {
                path: resolve_data_path(path),
                limit: patch.limit,
            }),
            (None, Some(vocab)) => Ok(EmbeddingSource::Synthetic {
                vocab,
                dim: patch.dim.unwrap_or(64),
            }),
            (None, None) => usage("config [embeddings] needs either path or vocab"),
        };
    }
    Ok(EmbeddingSource::Synthetic {
        vocab: 5_000,
        dim: 64,
    })
}

/// Checksum every input file the run depends on. Sources come from the
/// resolved config so files named in a `--config` patch are covered too.
fn fingerprints(config: &RunConfig, cli: &Cli) -> Result<Vec<DatasetFingerprint>, Failure> {
    let mut out = Vec::new();
    if let GraphSource::EdgeList { path } = &config.graph {
        out.push(fingerprint("graph", path)?);
    }
    if let EmbeddingSource::VectorFile { path, .. } = &config.embeddings {
        out.push(fingerprint("embeddings", path)?);
    }
    if let Some(path) = &cli.load_embeddings {
        out.push(fingerprint("warm-start", path)?);
    }
    Ok(out)
}

fn fingerprint(role: &str, path: &Path) -> Result<DatasetFingerprint, Failure> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::Runtime(format!("cannot fingerprint {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(DatasetFingerprint {
        role: role.to_string(),
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: format!("{:x}", hasher.finalize()),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}
