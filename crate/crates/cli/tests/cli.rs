//! End-to-end tests of the `pprsim` binary: flag handling, exit codes,
//! report/manifest emission and reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn pprsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pprsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// A fast, fully synthetic hops run writing its report to `out`.
fn small_hops_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "--experiment",
        "hops",
        "--m",
        "5,8",
        "--iterations",
        "2",
        "--queries-per-iter",
        "2",
        "--num-queries",
        "30",
        "--threshold",
        "-0.5",
        "--synthetic-nodes",
        "40",
        "--graph-degree",
        "4",
        "--synthetic-vocab",
        "60",
        "--dim",
        "8",
        "--ttl",
        "6",
        "--seed",
        "7",
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn hops_run_writes_report_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("hops.csv");
    let output = pprsim(&small_hops_args(out.to_str().unwrap(), &[]));
    assert!(output.status.success(), "{output:?}");

    let report = fs::read_to_string(&out).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next(),
        Some("m,success,total,median_hops,mean_hops,std_hops")
    );
    assert_eq!(lines.count(), 2, "one row per corpus size");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("hops.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["artifact"], "pprsim-run");
    assert_eq!(manifest["version"], 1);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["ttl"], 6);
    assert_eq!(manifest["datasets"], serde_json::json!([]));
}

#[test]
fn same_seed_reproduces_the_report_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(pprsim(&small_hops_args(a.to_str().unwrap(), &[]))
        .status
        .success());
    assert!(pprsim(&small_hops_args(b.to_str().unwrap(), &[]))
        .status
        .success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn json_and_csv_reports_carry_identical_values() {
    let dir = TempDir::new().unwrap();
    let csv_path = dir.path().join("r.csv");
    let json_path = dir.path().join("r.json");
    assert!(pprsim(&small_hops_args(csv_path.to_str().unwrap(), &[]))
        .status
        .success());
    assert!(pprsim(&small_hops_args(json_path.to_str().unwrap(), &[]))
        .status
        .success());

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    let rows = json["rows"].as_array().unwrap();
    let csv = fs::read_to_string(&csv_path).unwrap();
    let csv_rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), csv_rows.len());
    for (row, line) in rows.iter().zip(csv_rows) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(row["m"].to_string(), fields[0]);
        assert_eq!(row["success"].to_string(), fields[1]);
        assert_eq!(row["total"].to_string(), fields[2]);
        for (key, field) in [
            ("median_hops", fields[3]),
            ("mean_hops", fields[4]),
            ("std_hops", fields[5]),
        ] {
            match row[key].as_f64() {
                Some(value) => {
                    assert!((value - field.parse::<f64>().unwrap()).abs() < 1e-12)
                }
                None => assert_eq!(field, ""),
            }
        }
    }
}

#[test]
fn out_of_range_alpha_is_a_usage_error() {
    let output = pprsim(&["--alpha", "1.5", "--synthetic-vocab", "20", "--dim", "4"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("alpha"), "{stderr}");
}

#[test]
fn unknown_flags_are_usage_errors() {
    let output = pprsim(&["--no-such-flag"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let output = pprsim(&["--experiment", "latency"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unwritable_report_path_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let block = dir.path().join("blockfile");
    fs::write(&block, "not a directory").unwrap();
    let out = block.join("r.csv");
    let output = pprsim(&small_hops_args(out.to_str().unwrap(), &[]));
    assert_eq!(output.status.code(), Some(1));
    // Co-written or neither: no manifest may exist either.
    assert!(!block.join("r.manifest.json").exists());
}

#[test]
fn flags_override_config_file_values() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "ttl = 20\nseed = 9\n").unwrap();
    let out = dir.path().join("r.csv");
    let mut args = small_hops_args(out.to_str().unwrap(), &[]);
    args.extend_from_slice(&["--config", config.to_str().unwrap()]);
    // --ttl 6 from small_hops_args must beat the file's 20; the file's seed
    // must lose to --seed 7.
    assert!(pprsim(&args).status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["ttl"], 6);
    assert_eq!(manifest["config"]["seed"], 7);
}

#[test]
fn config_file_values_apply_when_no_flag_competes() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "experiment = \"hops\"\nm = [5]\niterations = 1\nqueries_per_iter = 2\n\
         num_queries = 30\nthreshold = -0.5\nttl = 4\nk = 2\n\n\
         [graph]\nnodes = 30\ndegree = 4\n\n[embeddings]\nvocab = 80\ndim = 8\n",
    )
    .unwrap();
    let out = dir.path().join("r.csv");
    let output = pprsim(&[
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["ttl"], 4);
    assert_eq!(manifest["config"]["k"], 2);
    assert_eq!(manifest["config"]["graph"]["nodes"], 30);
}

#[test]
fn malformed_config_file_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "ttk = 20\n").unwrap();
    let output = pprsim(&["--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn graph_files_resolve_against_the_data_dir() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("tiny_edges.txt"),
        "# toy graph\n0 1\n1 2\n2 3\n3 0\n0 2\n1 3\n",
    )
    .unwrap();
    let out = dir.path().join("r.csv");
    let output = Command::new(env!("CARGO_BIN_EXE_pprsim"))
        .env("PPRSIM_DATA_DIR", dir.path())
        .args([
            "--experiment",
            "hops",
            "--graph",
            "tiny_edges.txt",
            "--m",
            "3",
            "--iterations",
            "1",
            "--num-queries",
            "20",
            "--threshold",
            "-0.5",
            "--synthetic-vocab",
            "40",
            "--dim",
            "4",
            "--ttl",
            "3",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.manifest.json")).unwrap())
            .unwrap();
    let datasets = manifest["datasets"].as_array().unwrap();
    assert_eq!(datasets.len(), 1);
    assert_eq!(datasets[0]["role"], "graph");
    assert_eq!(datasets[0]["sha256"].as_str().unwrap().len(), 64);
    assert!(datasets[0]["path"]
        .as_str()
        .unwrap()
        .ends_with("tiny_edges.txt"));
}

#[test]
fn graph_files_named_in_a_config_file_are_fingerprinted_too() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("tiny_edges.txt"),
        "0 1\n1 2\n2 3\n3 0\n0 2\n1 3\n",
    )
    .unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "experiment = \"hops\"\nm = [3]\niterations = 1\nnum_queries = 20\n\
         threshold = -0.5\nttl = 3\n\n[graph]\npath = \"tiny_edges.txt\"\n\n\
         [embeddings]\nvocab = 40\ndim = 4\n",
    )
    .unwrap();
    let out = dir.path().join("r.csv");
    let output = Command::new(env!("CARGO_BIN_EXE_pprsim"))
        .env("PPRSIM_DATA_DIR", dir.path())
        .args([
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.manifest.json")).unwrap())
            .unwrap();
    let datasets = manifest["datasets"].as_array().unwrap();
    assert_eq!(datasets.len(), 1);
    assert_eq!(datasets[0]["role"], "graph");
    assert!(datasets[0]["path"]
        .as_str()
        .unwrap()
        .ends_with("tiny_edges.txt"));
}

#[test]
fn saved_embeddings_warm_start_a_later_run() {
    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("summaries.txt");
    let out = dir.path().join("cold.csv");
    let mut save_args = small_hops_args(out.to_str().unwrap(), &[]);
    save_args.extend_from_slice(&["--save-embeddings", dump.to_str().unwrap()]);
    let output = pprsim(&save_args);
    assert!(output.status.success(), "{output:?}");
    assert!(
        fs::read_to_string(&dump)
            .unwrap()
            .starts_with("pprsim-embeddings 1 40 8"),
        "dump carries the expected header"
    );
    // Save mode is standalone: no report was written.
    assert!(!out.exists());

    let cold = pprsim(&small_hops_args(out.to_str().unwrap(), &[]));
    assert!(cold.status.success());
    let warm_out = dir.path().join("warm.csv");
    let warm = pprsim(&small_hops_args(
        warm_out.to_str().unwrap(),
        &["--load-embeddings", dump.to_str().unwrap()],
    ));
    assert!(warm.status.success(), "{warm:?}");
    // Warm start speeds convergence without moving the fixed point, so the
    // reported metrics agree with the cold run.
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        fs::read_to_string(&warm_out).unwrap()
    );
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("warm.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["datasets"][0]["role"], "warm-start");
}

#[test]
fn mismatched_warm_start_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("summaries.txt");
    let mut save_args = small_hops_args("unused.csv", &[]);
    save_args.extend_from_slice(&["--save-embeddings", dump.to_str().unwrap()]);
    assert!(pprsim(&save_args).status.success());

    // Same dump against a differently sized graph must be rejected.
    let out = dir.path().join("r.csv");
    let mut args = small_hops_args(out.to_str().unwrap(), &[]);
    let nodes = args.iter().position(|a| *a == "--synthetic-nodes").unwrap();
    args[nodes + 1] = "30";
    args.extend_from_slice(&["--load-embeddings", dump.to_str().unwrap()]);
    let output = pprsim(&args);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn trace_writes_one_json_object_per_processed_message() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.csv");
    let trace = dir.path().join("trace.jsonl");
    let output = pprsim(&small_hops_args(
        out.to_str().unwrap(),
        &["--trace", trace.to_str().unwrap()],
    ));
    assert!(output.status.success(), "{output:?}");
    let text = fs::read_to_string(&trace).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let event: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(event["m"].is_u64());
        assert!(event["iteration"].is_u64());
        assert!(event["kind"].is_string());
        assert!(event["action"].is_string());
    }
}

#[test]
fn stdout_mode_prints_the_report_and_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_pprsim"))
        .current_dir(dir.path())
        .args([
            "--experiment",
            "hops",
            "--m",
            "5",
            "--iterations",
            "1",
            "--num-queries",
            "20",
            "--threshold",
            "-0.5",
            "--synthetic-nodes",
            "30",
            "--graph-degree",
            "4",
            "--synthetic-vocab",
            "40",
            "--dim",
            "4",
            "--ttl",
            "4",
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.starts_with("m,success,total"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn accuracy_report_has_one_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("acc.csv");
    let output = pprsim(&[
        "--experiment",
        "accuracy",
        "--m",
        "5,8",
        "--alpha",
        "0.3,0.7",
        "--radii",
        "1,2",
        "--iterations",
        "2",
        "--num-queries",
        "30",
        "--threshold",
        "-0.5",
        "--synthetic-nodes",
        "40",
        "--graph-degree",
        "4",
        "--synthetic-vocab",
        "60",
        "--dim",
        "8",
        "--ttl",
        "6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    let report = fs::read_to_string(&out).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("m,alpha,radius,hits,samples,accuracy"));
    assert_eq!(lines.count(), 2 * 2 * 2, "m x alpha x radius rows");
}

fn exists_in(dir: &Path, name: &str) -> bool {
    dir.join(name).exists()
}

#[test]
fn save_mode_leaves_no_partial_outputs_behind() {
    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("s.txt");
    let out = dir.path().join("r.csv");
    let mut args = small_hops_args(out.to_str().unwrap(), &[]);
    args.extend_from_slice(&["--save-embeddings", dump.to_str().unwrap()]);
    assert!(pprsim(&args).status.success());
    assert!(exists_in(dir.path(), "s.txt"));
    assert!(!exists_in(dir.path(), "r.csv"));
    assert!(!exists_in(dir.path(), "r.manifest.json"));
}
