use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::benchmark::hex;
use super::run::{Method, RunConfig};
use crate::alignment::TaskLog;
use crate::error::{Error, Result};
use crate::formats::write_atomic;
use crate::metrics::AccuracyMatrix;
use crate::ClassId;

pub const REPORT_VERSION: u32 = 1;

/// Accuracies measured after one task. Task numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub after_task: usize,
    /// Entry `i` is the accuracy on task `i + 1`.
    pub accuracy: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub classes: usize,
    pub tasks: usize,
    pub dim: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WallTimes {
    pub total_seconds: f64,
    pub task_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub method: Method,
    pub seed: u64,
    pub config: RunConfig,
    pub benchmark: BenchmarkSummary,
    pub task_classes: Vec<Vec<ClassId>>,
    pub matrix: Option<Vec<MatrixRow>>,
    pub faa: Option<f64>,
    /// Absent when the benchmark has a single task.
    pub ci_transfer: Option<f64>,
    pub tasks: Vec<TaskLog>,
    /// Excluded from [`deterministic_hash`].
    pub wall_times: WallTimes,
}

pub(crate) fn matrix_rows(m: &AccuracyMatrix) -> Vec<MatrixRow> {
    m.rows()
        .iter()
        .enumerate()
        .map(|(t, row)| MatrixRow {
            after_task: t + 1,
            accuracy: row.clone(),
        })
        .collect()
}

impl RunReport {
    /// The accuracy matrix, checked for completeness.
    pub fn accuracy_matrix(&self) -> Result<AccuracyMatrix> {
        let rows = self
            .matrix
            .as_ref()
            .ok_or_else(|| Error::Completeness("report has no accuracy matrix".into()))?;
        let tasks = self.task_classes.len();
        if rows.len() != tasks || rows.iter().enumerate().any(|(t, r)| r.after_task != t + 1) {
            return Err(Error::Completeness(format!(
                "accuracy matrix has {} rows for {tasks} tasks",
                rows.len()
            )));
        }
        let m = AccuracyMatrix::from_rows(rows.iter().map(|r| r.accuracy.clone()).collect())?;
        if !m.is_complete() {
            return Err(Error::Completeness("accuracy matrix has missing entries".into()));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.accuracy_matrix()?;
        if self.faa.is_none() {
            return Err(Error::Completeness("report has no final average accuracy".into()));
        }
        if self.ci_transfer.is_none() && self.task_classes.len() > 1 {
            return Err(Error::Completeness("report has no transfer value".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: RunReport = serde_json::from_str(text)?;
        if report.format_version != REPORT_VERSION {
            return Err(Error::format(
                0,
                format!("report version {} is not {REPORT_VERSION}", report.format_version),
            ));
        }
        Ok(report)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunReport::from_json(&text)
    }
}

/// SHA-256 of the report with wall-clock fields removed.
pub fn deterministic_hash(report: &RunReport) -> Result<String> {
    let mut value = serde_json::to_value(report)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("wall_times");
    }
    Ok(hex(&Sha256::digest(serde_json::to_vec(&value)?)))
}

/// Matrix as CSV: a header, then one line per task checkpoint.
pub fn matrix_csv(report: &RunReport) -> Result<Vec<u8>> {
    let m = report.accuracy_matrix()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["after_task".to_string()];
    header.extend((1..=m.tasks()).map(|i| format!("task_{i}")));
    w.write_record(&header)?;
    for (t, row) in m.rows().iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|v| v.map_or_else(String::new, |v| format!("{v}"))));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// Writes the JSON report and, optionally, the matrix CSV. Emitting the
/// same report twice produces byte-identical files.
pub fn emit_report(report: &RunReport, json_path: &Path, csv_path: Option<&Path>) -> Result<()> {
    report.validate()?;
    write_atomic(json_path, report.to_json()?.as_bytes())?;
    if let Some(p) = csv_path {
        write_atomic(p, &matrix_csv(report)?)?;
    }
    Ok(())
}
