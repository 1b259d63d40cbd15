//! Editing-latency harness: N timed edits after one untimed warm-up, reported
//! as mean ± sample standard deviation, plus side-by-side comparison of
//! configurations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::GenerationBackend;
use crate::pipeline::{run_edit_with, EditError, EditOptions, EditRequest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("a benchmark needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("comparison needs at least 2 reports, got {0}")]
    TooFewReports(usize),
    #[error("warm-up run failed: {0}")]
    Warmup(EditError),
    #[error("run {index} failed: {source}")]
    Run {
        index: usize,
        #[source]
        source: EditError,
    },
}

/// Mean and sample (n − 1) standard deviation.
pub fn mean_and_sample_std(runs: &[f64]) -> (f64, f64) {
    let n = runs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = runs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = runs.iter().map(|r| (r - mean) * (r - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub label: String,
    pub runs: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub n: usize,
}

impl LatencyReport {
    pub fn from_runs(label: impl Into<String>, runs: Vec<f64>) -> Self {
        let (mean_ms, std_ms) = mean_and_sample_std(&runs);
        Self {
            label: label.into(),
            n: runs.len(),
            runs,
            mean_ms,
            std_ms,
        }
    }

    /// True when the stored mean/std equal a fresh recomputation from `runs`.
    pub fn is_consistent(&self) -> bool {
        let (m, s) = mean_and_sample_std(&self.runs);
        self.n == self.runs.len() && m.to_bits() == self.mean_ms.to_bits() && s.to_bits() == self.std_ms.to_bits()
    }
}

/// Times `n` sequential edits of `template`. Each run's latency is the
/// pipeline's own dispatch-to-layer-ready measurement.
pub fn run_benchmark(
    label: impl Into<String>,
    backend: &dyn GenerationBackend,
    template: &EditRequest,
    n: usize,
    options: &EditOptions,
) -> Result<LatencyReport, BenchError> {
    if n < 2 {
        return Err(BenchError::TooFewRuns(n));
    }
    run_edit_with(template, backend, options).map_err(BenchError::Warmup)?;
    let runs = (0..n)
        .map(|index| {
            run_edit_with(template, backend, options)
                .map(|r| r.layer.metadata.latency_ms)
                .map_err(|source| BenchError::Run { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LatencyReport::from_runs(label, runs))
}

/// Relative reduction `(baseline − other) / baseline`, in whole percent,
/// halves rounded away from zero.
pub fn reduction_percent(baseline_ms: f64, other_ms: f64) -> i64 {
    if baseline_ms == 0.0 {
        return 0;
    }
    ((baseline_ms - other_ms) / baseline_ms * 100.0).round() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub n: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Relative to the first report; `None` for the baseline itself.
    pub reduction_pct: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.chars().count())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = format!(
            "{:<width$}  {:>4}  {:>12}  {:>10}  {}\n",
            "config", "n", "mean (ms)", "std (ms)", "vs baseline"
        );
        for r in &self.rows {
            let change = match r.reduction_pct {
                None => "baseline".to_string(),
                Some(p) if p >= 0 => format!("{p}% lower"),
                Some(p) => format!("{}% higher", -p),
            };
            out.push_str(&format!(
                "{:<width$}  {:>4}  {:>12.2}  {:>10.2}  {}\n",
                r.label, r.n, r.mean_ms, r.std_ms, change
            ));
        }
        out
    }
}

/// Compares every report against the first.
pub fn compare(reports: &[LatencyReport]) -> Result<Comparison, BenchError> {
    if reports.len() < 2 {
        return Err(BenchError::TooFewReports(reports.len()));
    }
    let base = reports[0].mean_ms;
    Ok(Comparison {
        rows: reports
            .iter()
            .enumerate()
            .map(|(i, r)| ComparisonRow {
                label: r.label.clone(),
                n: r.n,
                mean_ms: r.mean_ms,
                std_ms: r.std_ms,
                reduction_pct: (i > 0).then(|| reduction_percent(base, r.mean_ms)),
            })
            .collect(),
    })
}
