//! Output files of a preset run.
//!
//! All tables are comma-separated UTF-8 with a header row and LF line
//! endings. Floats are written in their shortest round-trip form, so a
//! rerun with the same seed reproduces every file byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const KNOWLEDGE_FILE: &str = "knowledge.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.json";

/// One value of one metric at one epoch (1-based) for one scope.
///
/// `scope` is `server` for the global model of a star topology,
/// `honest_mean` for the average over honest peers, and `user:<id>` for a
/// single peer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub preset: String,
    pub seed: u64,
    pub run: String,
    pub epoch: usize,
    pub scope: String,
    pub metric: String,
    pub value: f64,
}

/// Decision quality of one evaluator at one knowledge degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRow {
    pub preset: String,
    pub seed: u64,
    pub mode: String,
    pub degree: f64,
    pub evaluator: String,
    pub slice_size: usize,
    pub accuracy: f64,
    pub fpr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc_local: f64,
    pub acc_all: f64,
    pub potential: f64,
}

/// Prediction of one final model on one test sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub run: String,
    pub model: String,
    pub index: usize,
    pub ground_truth: usize,
    pub prediction: usize,
}

/// Last value of each aggregate-scope metric of a run.
pub type FinalMetrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSummary {
    pub mode: String,
    pub evaluator: String,
    pub points: usize,
    /// Spearman correlation of decision accuracy with learning potential.
    pub rho_accuracy_potential: Option<f64>,
    /// Spearman correlation of FPR with learning potential.
    pub rho_fpr_potential: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: String,
    pub seed: u64,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub runs: BTreeMap<String, FinalMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knowledge: Vec<KnowledgeSummary>,
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(CliError::csv(path))
}

/// Writes `rows` with the header derived from `T`; an empty table still
/// gets its header.
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    if rows.is_empty() {
        w.write_record(header).map_err(CliError::csv(path))?;
    }
    for row in rows {
        w.serialize(row).map_err(CliError::csv(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(CliError::csv(path))
}

pub const METRICS_HEADER: [&str; 7] = ["preset", "seed", "run", "epoch", "scope", "metric", "value"];
pub const KNOWLEDGE_HEADER: [&str; 15] = [
    "preset", "seed", "mode", "degree", "evaluator", "slice_size", "accuracy", "fpr", "tp", "fp",
    "tn", "fn", "acc_local", "acc_all", "potential",
];
pub const PREDICTIONS_HEADER: [&str; 5] = ["run", "model", "index", "ground_truth", "prediction"];

pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}
