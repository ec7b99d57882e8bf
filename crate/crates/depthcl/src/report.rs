//! Aggregates of a performance matrix: JSON, an aligned text table and one
//! heatmap grid per metric.

use std::fmt::Write as _;
use std::path::Path;

use depthcl_core::metrics::{mu_final, mu_overall, spto, Metric, PerformanceMatrix, Spto, SptoNormalization};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, write_json};

#[derive(Debug, Clone, Serialize)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub mu_final: f64,
    pub mu_overall: f64,
    /// Present when at least two tasks were trained.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spto: Option<Spto>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub n_tasks: usize,
    pub spto_normalization: SptoNormalization,
    pub metrics: Vec<MetricSummary>,
}

pub fn summarize(m: &PerformanceMatrix, norm: SptoNormalization) -> Result<Report> {
    let n = m.n_tasks();
    let missing = m.metric(Metric::AbsRel).missing();
    if !missing.is_empty() {
        let cells: Vec<String> = missing.iter().map(|(i, j)| format!("({i},{j})")).collect();
        return Err(Error::Input(format!(
            "incomplete performance matrix, missing (trained, eval): {}",
            cells.join(" ")
        )));
    }
    let metrics = Metric::ALL
        .iter()
        .map(|&k| {
            let a = m.metric(k);
            Ok(MetricSummary {
                metric: k.name(),
                mu_final: mu_final(&a)?,
                mu_overall: mu_overall(&a)?,
                spto: if n >= 2 { Some(spto(&a, norm)?) } else { None },
            })
        })
        .collect::<depthcl_core::Result<Vec<_>>>()?;
    Ok(Report {
        n_tasks: n,
        spto_normalization: norm,
        metrics,
    })
}

pub fn text_table(r: &Report) -> String {
    let with_spto = r.n_tasks >= 2;
    let mut header = vec!["metric", "mu_final", "mu_overall"];
    if with_spto {
        header.extend(["stability", "plasticity", "spto"]);
    }
    let rows: Vec<Vec<String>> = r
        .metrics
        .iter()
        .map(|s| {
            let mut row = vec![s.metric.to_string(), format!("{:.4}", s.mu_final), format!("{:.4}", s.mu_overall)];
            if let Some(p) = s.spto {
                row.extend([p.stability, p.plasticity, p.spto].map(|v| format!("{v:.4}")));
            }
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, &w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&header);
    for r in &rows {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Rows are the trained task, columns the evaluated task; empty cells were
/// not evaluated.
pub fn heatmap_csv(m: &PerformanceMatrix, k: Metric) -> String {
    let n = m.n_tasks();
    let a = m.metric(k);
    let mut out = String::from("trained_task");
    for j in 1..=n {
        let _ = write!(out, ",eval_{j}");
    }
    out.push('\n');
    for i in 0..n {
        let _ = write!(out, "{}", i + 1);
        for j in 0..n {
            out.push(',');
            if let Some(v) = a.get(i, j) {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `report.json`, `report.txt` and `heatmap_<metric>.csv` into `dir`.
pub fn write_report(dir: &Path, m: &PerformanceMatrix, norm: SptoNormalization) -> Result<Report> {
    let r = summarize(m, norm)?;
    write_json(&dir.join("report.json"), &r)?;
    atomic_write(&dir.join("report.txt"), text_table(&r).as_bytes())?;
    for k in Metric::ALL {
        atomic_write(&dir.join(format!("heatmap_{}.csv", k.name())), heatmap_csv(m, k).as_bytes())?;
    }
    Ok(r)
}
