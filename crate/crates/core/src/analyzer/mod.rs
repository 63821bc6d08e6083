//! Statistics over raw latency records and the two report layouts.

mod log;
mod table;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

pub use log::{export_log, parse_log, records_from_log, LogRow, RunMeta, LOG_HEADER};
pub use table::{render_per_model, render_per_op, render_table, Report, PER_MODEL_HEADERS, PER_OP_HEADERS};

use crate::compiler::{DeployableModel, KERNEL_PREFIX};
use crate::rpc::TrialRecord;

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("no trial records to summarize")]
    EmptyRecords,
    #[error("no measurement for kernel {0}")]
    MissingKernelResult(usize),
    #[error("log I/O on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed log: {0}")]
    Log(String),
}

/// Per-model output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerModelReport {
    pub num_trials: usize,
    pub ci95_low_ms: f64,
    pub ci95_high_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub memory_kb: f64,
    pub storage_kb: f64,
}

/// One row of the per-operator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerOpRow {
    pub op_name: String,
    pub time_us: f64,
    pub time_pct: f64,
    pub assoc_params: Vec<String>,
    pub memory_kb: f64,
    pub storage_kb: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerOpReport {
    pub rows: Vec<PerOpRow>,
}

/// Bytes to KB with three decimals.
pub fn kb(bytes: u64) -> f64 {
    (bytes as f64 / 1024.0 * 1000.0).round() / 1000.0
}

/// Two-sided 95% Student-t quantile for `df` degrees of freedom.
pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1 is a valid Student-t").inverse_cdf(0.975)
}

/// Median as the mean of the two central order statistics for even n.
fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Summary statistics of latencies given in ms. Order of `samples` does not
/// affect the result.
pub fn summarize_ms(samples: &[f64]) -> Result<(f64, f64, f64, f64, f64), AnalyzerError> {
    if samples.is_empty() {
        return Err(AnalyzerError::EmptyRecords);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let (lo, hi) = if n == 1 {
        (v[0], v[0])
    } else {
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let half = t_quantile_975(n - 1) * var.sqrt() / (n as f64).sqrt();
        (mean - half, mean + half)
    };
    Ok((lo, hi, median_sorted(&v), v[0], v[n - 1]))
}

pub fn summarize_trials(
    records: &[TrialRecord],
    memory_bytes: u64,
    storage_bytes: u64,
) -> Result<PerModelReport, AnalyzerError> {
    let ms: Vec<f64> = records.iter().map(|r| r.latency_ns as f64 / 1e6).collect();
    let (ci95_low_ms, ci95_high_ms, median_ms, min_ms, max_ms) = summarize_ms(&ms)?;
    Ok(PerModelReport {
        num_trials: records.len(),
        ci95_low_ms,
        ci95_high_ms,
        median_ms,
        min_ms,
        max_ms,
        memory_kb: kb(memory_bytes),
        storage_kb: kb(storage_bytes),
    })
}

/// Measured mean time of one kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpMeasurement {
    pub kernel_index: usize,
    pub mean_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
}

/// Static annotation of one kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelInfo {
    pub name: String,
    pub assoc_params: Vec<String>,
    pub memory_bytes: u64,
    pub storage_bytes: u64,
}

pub fn kernel_infos(model: &DeployableModel) -> Vec<KernelInfo> {
    model
        .kernels
        .iter()
        .enumerate()
        .map(|(k, kernel)| KernelInfo {
            name: kernel.name.clone(),
            assoc_params: kernel.assoc_params.clone(),
            memory_bytes: model.kernel_memory[k],
            storage_bytes: model.storage.per_kernel[k],
        })
        .collect()
}

pub fn display_name(kernel_name: &str) -> &str {
    kernel_name.strip_prefix(KERNEL_PREFIX).unwrap_or(kernel_name)
}

/// Joins measurements with kernel annotations, one row per kernel in
/// execution order.
pub fn summarize_ops(results: &[OpMeasurement], kernels: &[KernelInfo]) -> Result<PerOpReport, AnalyzerError> {
    let mut times = Vec::with_capacity(kernels.len());
    for k in 0..kernels.len() {
        let r = results.iter().find(|r| r.kernel_index == k).ok_or(AnalyzerError::MissingKernelResult(k))?;
        times.push(r.mean_ns as f64 / 1000.0);
    }
    let total: f64 = times.iter().sum();
    let rows = kernels
        .iter()
        .zip(&times)
        .map(|(info, &t)| PerOpRow {
            op_name: display_name(&info.name).to_string(),
            time_us: t,
            time_pct: if total > 0.0 { 100.0 * t / total } else { 100.0 / kernels.len() as f64 },
            assoc_params: info.assoc_params.clone(),
            memory_kb: kb(info.memory_bytes),
            storage_kb: kb(info.storage_bytes),
        })
        .collect();
    Ok(PerOpReport { rows })
}

/// Machine-readable report document.
pub fn report_json(report: &Report) -> String {
    serde_json::to_string_pretty(report).expect("reports serialize")
}
