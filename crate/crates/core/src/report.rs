//! Metrics CSV and run summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Divergence, MetricsRecord, RunResult};
use crate::topology::SpectralReport;

/// Column order of `metrics.csv`. It never depends on the configuration.
pub const CSV_COLUMNS: &[&str] = &[
    "repeat",
    "iteration",
    "epoch",
    "train_loss_mean",
    "train_loss_per_agent",
    "test_accuracy_mean",
    "avg_model_accuracy",
    "aligned_avg_accuracy",
    "avg_model_test_loss",
    "consensus_error",
    "grad_norm_sq",
    "grad_norm_running_avg",
    "comm_rounds",
    "merges",
    "fixed_point_fraction",
    "diverged",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn row(r: &MetricsRecord) -> Vec<String> {
    vec![
        r.repeat.to_string(),
        r.iteration.to_string(),
        r.epoch.to_string(),
        opt(r.train_loss_mean()),
        r.train_loss.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
        opt(r.test_accuracy_mean),
        opt(r.avg_model_accuracy),
        opt(r.aligned_avg_accuracy),
        opt(r.avg_model_test_loss),
        r.consensus_error.to_string(),
        r.grad_norm_sq.to_string(),
        r.grad_norm_running_avg.to_string(),
        r.comm_rounds.to_string(),
        r.merges.to_string(),
        opt(r.fixed_point_fraction),
        u8::from(r.diverged).to_string(),
    ]
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("writing metrics: {e}"))
}

/// Header plus one row per record. Missing metrics are empty cells.
pub fn write_metrics_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record(row(r)).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn metrics_csv_string(records: &[MetricsRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, records)?;
    String::from_utf8(buf).map_err(csv_err)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                values,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub repeats: usize,
    pub seeds: Vec<u64>,
    /// Test accuracy of `x̄_K` per repeat (classification only).
    pub final_accuracy: Option<Stat>,
    pub final_test_loss: Stat,
    /// Mean over agents of their own final test accuracy.
    pub final_agent_accuracy: Option<Stat>,
    pub total_comm_rounds: f64,
    pub comm_rounds_per_epoch: f64,
    pub iters_per_epoch: usize,
    pub merges: usize,
    pub diverged: bool,
    pub divergences: Vec<Divergence>,
    pub spectral: SpectralReport,
}

impl Summary {
    pub fn from_runs(runs: &[RunResult]) -> Result<Self> {
        let Some(first) = runs.first() else {
            return Err(Error::InvalidInput("no runs to summarise".into()));
        };
        let accs: Option<Vec<f64>> = runs.iter().map(|r| r.final_accuracy).collect();
        let agent_accs: Option<Vec<f64>> = runs
            .iter()
            .map(|r| r.records.last().and_then(|rec| rec.test_accuracy_mean))
            .collect();
        let iterations = first.records.last().map_or(0, |r| r.iteration);
        let epochs = iterations as f64 / first.iters_per_epoch as f64;
        Ok(Self {
            repeats: runs.len(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            final_accuracy: accs.map(Stat::of),
            final_test_loss: Stat::of(runs.iter().map(|r| r.final_test_loss).collect()),
            final_agent_accuracy: agent_accs.map(Stat::of),
            total_comm_rounds: first.comm_rounds,
            comm_rounds_per_epoch: if epochs > 0.0 { first.comm_rounds / epochs } else { 0.0 },
            iters_per_epoch: first.iters_per_epoch,
            merges: first.merges.len(),
            diverged: runs.iter().any(|r| r.divergence.is_some()),
            divergences: runs.iter().filter_map(|r| r.divergence.clone()).collect(),
            spectral: first.spectral.clone(),
        })
    }
}
