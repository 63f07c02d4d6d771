//! Experiment outputs: tabular reports and the reproducibility manifest.
//!
//! Reports render to CSV and JSON. Metric values are rounded to four decimal
//! places *before* either rendering, so parsing one format and comparing
//! against the other sees identical numbers.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Round to four decimal places, the precision the reports publish.
pub fn round4(value: f64) -> f64 {
    (value * 10_000.0).round() / 10_000.0
}

fn fmt_cell(value: Option<f64>) -> String {
    value.map_or_else(String::new, |v| format!("{v:.4}"))
}

/// One (corpus size, alpha, radius) accuracy measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub m: usize,
    pub alpha: f64,
    pub radius: u32,
    pub hits: u64,
    pub samples: u64,
    /// `hits / samples`, absent when no sample had an origin at this radius.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub cells: Vec<AccuracyCell>,
}

/// Hop statistics for one corpus size; statistics cover successes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRow {
    pub m: usize,
    pub success: u64,
    pub total: u64,
    pub median_hops: Option<f64>,
    pub mean_hops: Option<f64>,
    pub std_hops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopReport {
    pub alpha: f64,
    pub rows: Vec<HopRow>,
}

/// A finished experiment, ready to render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Report {
    Accuracy(AccuracyReport),
    Hops(HopReport),
}

impl Report {
    /// Round every published metric to four decimals in place.
    pub fn rounded(mut self) -> Self {
        match &mut self {
            Report::Accuracy(report) => {
                for cell in &mut report.cells {
                    cell.accuracy = cell.accuracy.map(round4);
                }
            }
            Report::Hops(report) => {
                for row in &mut report.rows {
                    row.median_hops = row.median_hops.map(round4);
                    row.mean_hops = row.mean_hops.map(round4);
                    row.std_hops = row.std_hops.map(round4);
                }
            }
        }
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            Report::Accuracy(report) => {
                out.push_str("m,alpha,radius,hits,samples,accuracy\n");
                for c in &report.cells {
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        c.m,
                        c.alpha,
                        c.radius,
                        c.hits,
                        c.samples,
                        fmt_cell(c.accuracy)
                    ));
                }
            }
            Report::Hops(report) => {
                out.push_str("m,success,total,median_hops,mean_hops,std_hops\n");
                for r in &report.rows {
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        r.m,
                        r.success,
                        r.total,
                        fmt_cell(r.median_hops),
                        fmt_cell(r.mean_hops),
                        fmt_cell(r.std_hops)
                    ));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numeric(format!("report serialization failed: {e}")))
    }
}

/// Checksum and size of one input file, for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    /// What the file was used as: "graph" or "embeddings".
    pub role: String,
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Everything needed to reproduce a run: the full configuration plus
/// fingerprints of any input files. Written next to each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Always "pprsim-run".
    pub artifact: String,
    pub version: u32,
    pub seed: u64,
    pub config: RunConfig,
    pub datasets: Vec<DatasetFingerprint>,
}

impl RunManifest {
    pub fn new(config: RunConfig, datasets: Vec<DatasetFingerprint>) -> Self {
        Self {
            artifact: "pprsim-run".into(),
            version: 1,
            seed: config.seed,
            config,
            datasets,
        }
    }
}
