//! CSV tables: the performance matrix and the per-epoch loss log.

use std::path::Path;

use depthcl_core::experiment::EpochRecord;
use depthcl_core::metrics::{DepthMetrics, PerformanceMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::read;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    /// 1-based task indices.
    pub trained_task: usize,
    pub eval_task: usize,
    pub abs_rel: f64,
    pub rmse: f64,
    pub a1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub task: usize,
    #[serde(rename = "L_depth")]
    pub depth: f64,
    #[serde(rename = "L_STC")]
    pub stc: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
}

fn to_csv<S: Serialize>(rows: impl IntoIterator<Item = S>, header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let err = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Input(e.to_string()))
}

/// Populated cells in row-major order; values print in shortest round-trip form.
pub fn matrix_csv(m: &PerformanceMatrix) -> Result<Vec<u8>> {
    let rows = m.entries().map(|(i, j, d)| MatrixRow {
        trained_task: i + 1,
        eval_task: j + 1,
        abs_rel: d.abs_rel,
        rmse: d.rmse,
        a1: d.a1,
    });
    to_csv(rows, &["trained_task", "eval_task", "abs_rel", "rmse", "a1"])
}

pub fn parse_matrix_csv(bytes: &[u8], path: &Path) -> Result<PerformanceMatrix> {
    let mut r = csv::Reader::from_reader(bytes);
    let rows = r
        .deserialize::<MatrixRow>()
        .enumerate()
        .map(|(k, row)| row.map_err(|e| Error::format(path, format!("row {}: {e}", k + 1))))
        .collect::<Result<Vec<_>>>()?;
    let n = rows.iter().map(|r| r.trained_task.max(r.eval_task)).max().unwrap_or(0);
    if n == 0 || rows.iter().any(|r| r.trained_task == 0 || r.eval_task == 0) {
        return Err(Error::format(path, "task indices are 1-based and at least one row is required"));
    }
    let mut m = PerformanceMatrix::new(n);
    for r in rows {
        m.set(
            r.trained_task - 1,
            r.eval_task - 1,
            DepthMetrics {
                abs_rel: r.abs_rel,
                rmse: r.rmse,
                a1: r.a1,
            },
        );
    }
    Ok(m)
}

pub fn read_matrix_csv(path: &Path) -> Result<PerformanceMatrix> {
    parse_matrix_csv(&read(path)?, path)
}

pub fn loss_csv(records: &[EpochRecord]) -> Result<Vec<u8>> {
    let rows = records.iter().map(|r| LossRow {
        epoch: r.epoch,
        task: r.task,
        depth: r.depth,
        stc: r.stc,
        total: r.total,
    });
    to_csv(rows, &["epoch", "task", "L_depth", "L_STC", "L_total"])
}
