//! Central finite-difference verification of tape gradients (binary64).

use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::Result;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Normwise relative error `|analytic - numeric| / max(|analytic|, |numeric|)`
    /// per input.
    pub rel_err: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences with step `h`. Inputs flagged `false` in `wrt` are passed as
/// constants and not checked.
pub fn check<F>(inputs: &[Tensor<f64>], wrt: &[bool], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(wrt.iter().chain(core::iter::repeat(&true)))
        .map(|(t, &w)| tape.leaf(t.clone(), w))
        .collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut rel_err = Vec::new();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, t) in inputs.iter().enumerate() {
        if !wrt.get(k).copied().unwrap_or(true) {
            continue;
        }
        let analytic: Vec<f64> = tape
            .grad(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| alloc::vec![0.0; t.numel()]);
        let mut numeric = alloc::vec![0.0; t.numel()];
        for i in 0..t.numel() {
            let x = t.data()[i];
            work[k].data_mut()[i] = x + h;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = x - h;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = x;
            numeric[i] = (fp - fm) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric)).max(1e-8);
        rel_err.push(norm(&diff) / scale);
    }
    Ok(GradCheckReport { rel_err })
}
