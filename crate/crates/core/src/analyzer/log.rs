use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalyzerError;
use crate::rpc::TrialRecord;

pub const LOG_HEADER: [&str; 8] =
    ["run_id", "board", "model", "mode", "trial_or_kernel", "latency_ns", "seed", "timestamp"];

/// Shared columns of every row of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMeta {
    pub run_id: String,
    pub board: String,
    pub model: String,
    /// `<granularity>/<timing mode>`, e.g. `per-model/costmodel`.
    pub mode: String,
    pub seed: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunMeta {
    pub fn new(board: &str, model: &str, mode: &str, seed: u64) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        RunMeta {
            run_id: uuid::Uuid::new_v4().to_string(),
            board: board.into(),
            model: model.into(),
            mode: mode.into(),
            seed,
            timestamp,
        }
    }

    pub fn row(&self, trial_or_kernel: impl Into<String>, latency_ns: u64) -> LogRow {
        LogRow {
            run_id: self.run_id.clone(),
            board: self.board.clone(),
            model: self.model.clone(),
            mode: self.mode.clone(),
            trial_or_kernel: trial_or_kernel.into(),
            latency_ns,
            seed: self.seed,
            timestamp: self.timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRow {
    pub run_id: String,
    pub board: String,
    pub model: String,
    pub mode: String,
    pub trial_or_kernel: String,
    pub latency_ns: u64,
    pub seed: u64,
    pub timestamp: u64,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AnalyzerError {
    AnalyzerError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Appends `rows` to the CSV at `path`, writing the header only when the
/// file is new or empty.
pub fn export_log(rows: &[LogRow], path: &Path) -> Result<(), AnalyzerError> {
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
    let fresh = file.metadata().map_err(|e| io_err(path, e))?.len() == 0;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(LOG_HEADER).map_err(|e| io_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn parse_log(path: &Path) -> Result<Vec<LogRow>, AnalyzerError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = r.headers().map_err(|e| AnalyzerError::Log(e.to_string()))?;
    if headers.iter().ne(LOG_HEADER) {
        return Err(AnalyzerError::Log(format!("unexpected header {headers:?}")));
    }
    r.deserialize().map(|row| row.map_err(|e| AnalyzerError::Log(e.to_string()))).collect()
}

/// Trial records of run `run_id` (per-model rows only).
pub fn records_from_log(rows: &[LogRow], run_id: &str) -> Result<Vec<TrialRecord>, AnalyzerError> {
    rows.iter()
        .filter(|r| r.run_id == run_id && r.mode.starts_with("per-model"))
        .map(|r| {
            let trial_index = r
                .trial_or_kernel
                .parse()
                .map_err(|_| AnalyzerError::Log(format!("trial index {:?} is not a number", r.trial_or_kernel)))?;
            Ok(TrialRecord { trial_index, latency_ns: r.latency_ns })
        })
        .collect()
}
