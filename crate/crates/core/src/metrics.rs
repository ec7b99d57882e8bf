//! Depth accuracy metrics and continual-learning aggregates over the task-wise
//! performance matrix.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio threshold of the a1 accuracy.
pub const A1_THRESHOLD: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub rmse: f64,
    pub a1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AbsRel,
    Rmse,
    A1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::AbsRel, Metric::Rmse, Metric::A1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AbsRel => "abs_rel",
            Metric::Rmse => "rmse",
            Metric::A1 => "a1",
        }
    }

    pub fn lower_is_better(self) -> bool {
        !matches!(self, Metric::A1)
    }
}

impl DepthMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::AbsRel => self.abs_rel,
            Metric::Rmse => self.rmse,
            Metric::A1 => self.a1,
        }
    }

    /// Per-field mean.
    pub fn mean(items: &[DepthMetrics]) -> Result<DepthMetrics> {
        if items.is_empty() {
            return Err(Error::EmptyReduction("DepthMetrics::mean"));
        }
        let n = items.len() as f64;
        Ok(DepthMetrics {
            abs_rel: items.iter().map(|m| m.abs_rel).sum::<f64>() / n,
            rmse: items.iter().map(|m| m.rmse).sum::<f64>() / n,
            a1: items.iter().map(|m| m.a1).sum::<f64>() / n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub median_scale: bool,
    /// Depth range both maps are clamped to after scaling.
    pub clamp: Option<(f64, f64)>,
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Metrics of one image. Pixels with non-positive or non-finite ground truth
/// are ignored.
pub fn depth_metrics(pred: &[f64], gt: &[f64], opts: &EvalOptions) -> Result<DepthMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::shape("depth_metrics", &[pred.len()], &[gt.len()]));
    }
    let valid: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] > 0.0 && gt[i].is_finite()).collect();
    if valid.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let mut p: Vec<f64> = valid.iter().map(|&i| pred[i]).collect();
    let mut g: Vec<f64> = valid.iter().map(|&i| gt[i]).collect();
    if opts.median_scale {
        let s = median(&mut g.clone()) / median(&mut p.clone());
        p.iter_mut().for_each(|v| *v *= s);
    }
    if let Some((lo, hi)) = opts.clamp {
        p.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        g.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }
    let n = p.len() as f64;
    let (mut abs_rel, mut sq, mut good) = (0.0, 0.0, 0usize);
    for (&d, &t) in p.iter().zip(&g) {
        abs_rel += (d - t).abs() / t;
        sq += (d - t) * (d - t);
        if (d / t).max(t / d) < A1_THRESHOLD {
            good += 1;
        }
    }
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        rmse: (sq / n).sqrt(),
        a1: good as f64 / n,
    })
}

/// Square matrix of one metric; `(i, j)` is task `j` after training task `i`
/// (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMatrix {
    n: usize,
    cells: Vec<Option<f64>>,
}

impl TaskMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cells: vec![None; n * n],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut m = Self::new(n);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate().take(n) {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn n_tasks(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.cells[i * self.n + j] = Some(v);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.n + j]
    }

    /// Lower-triangle cells (1-based) that are still empty.
    pub fn missing(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..=i {
                if self.get(i, j).is_none() {
                    out.push((i + 1, j + 1));
                }
            }
        }
        out
    }

    fn require(&self, cells: impl Iterator<Item = (usize, usize)>) -> Result<Vec<f64>> {
        let mut vals = Vec::new();
        let mut missing = Vec::new();
        for (i, j) in cells {
            match self.get(i, j) {
                Some(v) => vals.push(v),
                None => missing.push((i + 1, j + 1)),
            }
        }
        if !missing.is_empty() {
            return Err(Error::IncompleteMatrix(missing));
        }
        if self.n == 0 {
            return Err(Error::EmptyReduction("task matrix"));
        }
        Ok(vals)
    }
}

/// Mean over the final row.
pub fn mu_final(a: &TaskMatrix) -> Result<f64> {
    let n = a.n;
    let v = a.require((0..n).map(|j| (n.wrapping_sub(1), j)))?;
    Ok(v.iter().sum::<f64>() / n as f64)
}

/// Mean over the lower triangle.
pub fn mu_overall(a: &TaskMatrix) -> Result<f64> {
    let n = a.n;
    let v = a.require((0..n).flat_map(|i| (0..=i).map(move |j| (i, j))))?;
    Ok(2.0 * v.iter().sum::<f64>() / (n * (n + 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SptoNormalization {
    /// Stability sum of `n − 1` terms divided by `n`.
    #[default]
    PaperLiteral,
    /// Stability averaged over its `n − 1` terms.
    PerTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spto {
    pub stability: f64,
    pub plasticity: f64,
    pub spto: f64,
}

/// Stability (final row, old tasks), plasticity (diagonal) and their
/// harmonic mean.
pub fn spto(a: &TaskMatrix, norm: SptoNormalization) -> Result<Spto> {
    let n = a.n;
    if n < 2 {
        return Err(Error::Config(String::from("stability-plasticity needs at least two tasks")));
    }
    let last = a.require((0..n - 1).map(|j| (n - 1, j)))?;
    let diag = a.require((0..n).map(|i| (i, i)))?;
    let s_div = match norm {
        SptoNormalization::PaperLiteral => n,
        SptoNormalization::PerTerm => n - 1,
    } as f64;
    let stability = last.iter().sum::<f64>() / s_div;
    let plasticity = diag.iter().sum::<f64>() / n as f64;
    let denom = stability + plasticity;
    let spto = if denom == 0.0 {
        0.0
    } else {
        2.0 * stability * plasticity / denom
    };
    Ok(Spto {
        stability,
        plasticity,
        spto,
    })
}

/// Per-metric task matrices filled together.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    n: usize,
    cells: Vec<Option<DepthMetrics>>,
}

impl PerformanceMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cells: vec![None; n * n],
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, i: usize, j: usize, m: DepthMetrics) {
        self.cells[i * self.n + j] = Some(m);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<DepthMetrics> {
        self.cells[i * self.n + j]
    }

    pub fn metric(&self, m: Metric) -> TaskMatrix {
        TaskMatrix {
            n: self.n,
            cells: self.cells.iter().map(|c| c.map(|d| d.get(m))).collect(),
        }
    }

    /// Populated cells in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, DepthMetrics)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.map(|m| (k / self.n, k % self.n, m)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RAW: EvalOptions = EvalOptions {
        median_scale: false,
        clamp: None,
    };

    #[test]
    fn perfect_prediction() {
        let g = [1.0, 2.0, 5.0];
        let m = depth_metrics(&g, &g, &RAW).unwrap();
        assert_eq!((m.abs_rel, m.rmse, m.a1), (0.0, 0.0, 1.0));
    }

    #[test]
    fn median_scaling_cancels_global_scale() {
        let g = [1.0, 2.0, 5.0, 7.0];
        let p: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        let opts = EvalOptions {
            median_scale: true,
            clamp: Some((0.1, 80.0)),
        };
        let m = depth_metrics(&p, &g, &opts).unwrap();
        assert!(m.abs_rel < 1e-15 && m.rmse < 1e-14 && m.a1 == 1.0);
    }

    #[test]
    fn hand_example() {
        let m = depth_metrics(&[1.0, 2.0], &[2.0, 2.0], &RAW).unwrap();
        assert_eq!(m.abs_rel, 0.25);
        assert!((m.rmse - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.a1, 0.5);
    }

    #[test]
    fn no_valid_pixels() {
        assert!(matches!(depth_metrics(&[1.0], &[0.0], &RAW), Err(Error::NoValidPixels)));
    }

    #[test]
    fn aggregates_two_tasks() {
        let mut a = TaskMatrix::new(2);
        a.set(0, 0, 1.0);
        a.set(1, 0, 0.5);
        a.set(1, 1, 0.8);
        assert!((mu_final(&a).unwrap() - 0.65).abs() < 1e-12);
        assert!((mu_overall(&a).unwrap() - 2.3 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_task() {
        let a = TaskMatrix::from_rows(&[&[0.3]]);
        assert_eq!(mu_final(&a).unwrap(), 0.3);
        assert_eq!(mu_overall(&a).unwrap(), 0.3);
        assert!(spto(&a, SptoNormalization::PaperLiteral).is_err());
    }

    #[test]
    fn constant_matrix() {
        let c = 0.4;
        let row = [c; 4];
        let a = TaskMatrix::from_rows(&[&row, &row, &row, &row]);
        assert!((mu_final(&a).unwrap() - c).abs() < 1e-12);
        assert!((mu_overall(&a).unwrap() - c).abs() < 1e-12);
        let s = spto(&a, SptoNormalization::PaperLiteral).unwrap();
        assert!((s.stability - 0.75 * c).abs() < 1e-12);
        assert!((s.plasticity - c).abs() < 1e-12);
        assert!((s.spto - 6.0 * c / 7.0).abs() < 1e-12);
        let s = spto(&a, SptoNormalization::PerTerm).unwrap();
        assert!((s.spto - c).abs() < 1e-12);
    }

    #[test]
    fn spto_zero_denominator() {
        let a = TaskMatrix::from_rows(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(spto(&a, SptoNormalization::PaperLiteral).unwrap().spto, 0.0);
    }

    #[test]
    fn incomplete_matrix_lists_cells() {
        let mut a = TaskMatrix::new(2);
        a.set(0, 0, 1.0);
        match mu_overall(&a) {
            Err(Error::IncompleteMatrix(cells)) => assert_eq!(cells, vec![(2, 1), (2, 2)]),
            other => panic!("{other:?}"),
        }
        assert_eq!(a.missing(), vec![(2, 1), (2, 2)]);
    }
}
