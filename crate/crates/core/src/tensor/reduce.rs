use alloc::vec::Vec;

use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Routes the gradient to the first minimal index.
    Min,
}

/// `(outer, extent, inner)` split of `shape` around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct ReduceOp {
    kind: ReduceKind,
    a: Var,
    axis: Option<usize>,
    argmin: Vec<usize>,
}

impl<T: Real> Backward<T> for ReduceOp {
    fn name(&self) -> &'static str {
        "reduce"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, _out: Var, grad: &[T]) {
        let shape = ctx.value(self.a).shape().to_vec();
        let Some(ga) = ctx.grad_mut(self.a) else {
            return;
        };
        let n = ga.len();
        match (self.kind, self.axis) {
            (ReduceKind::Sum, None) => ga.iter_mut().for_each(|g| *g += grad[0]),
            (ReduceKind::Mean, None) => {
                let s = grad[0] / T::c(n as f64);
                ga.iter_mut().for_each(|g| *g += s);
            }
            (ReduceKind::Min, _) => {
                for (o, &src) in self.argmin.iter().enumerate() {
                    ga[src] += grad[o];
                }
            }
            (kind, Some(axis)) => {
                let (outer, extent, inner) = split(&shape, axis);
                let w = if kind == ReduceKind::Mean {
                    T::one() / T::c(extent as f64)
                } else {
                    T::one()
                };
                for o in 0..outer {
                    for k in 0..extent {
                        let base = (o * extent + k) * inner;
                        for i in 0..inner {
                            ga[base + i] += grad[o * inner + i] * w;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn reduce(&mut self, a: Var, kind: ReduceKind, axis: Option<usize>) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape().to_vec();
        if src.numel() == 0 {
            return Err(Error::EmptyReduction("reduce"));
        }
        let data = src.data();
        let mut argmin = Vec::new();
        let value = match axis {
            None => {
                let v = match kind {
                    ReduceKind::Sum => data.iter().copied().sum(),
                    ReduceKind::Mean => data.iter().copied().sum::<T>() / T::c(data.len() as f64),
                    ReduceKind::Min => {
                        let (idx, v) = data.iter().enumerate().fold((0, data[0]), |(bi, bv), (i, &v)| {
                            if v < bv {
                                (i, v)
                            } else {
                                (bi, bv)
                            }
                        });
                        argmin.push(idx);
                        v
                    }
                };
                Tensor::scalar(v)
            }
            Some(axis) => {
                if axis >= shape.len() {
                    return Err(Error::invalid("reduce", alloc::format!("axis {axis} out of range for {shape:?}")));
                }
                let (outer, extent, inner) = split(&shape, axis);
                let mut out = alloc::vec![T::zero(); outer * inner];
                if kind == ReduceKind::Min {
                    argmin = alloc::vec![0; outer * inner];
                }
                for o in 0..outer {
                    for i in 0..inner {
                        let dst = o * inner + i;
                        match kind {
                            ReduceKind::Sum | ReduceKind::Mean => {
                                let mut s = T::zero();
                                for k in 0..extent {
                                    s += data[(o * extent + k) * inner + i];
                                }
                                if kind == ReduceKind::Mean {
                                    s /= T::c(extent as f64);
                                }
                                out[dst] = s;
                            }
                            ReduceKind::Min => {
                                let mut best = o * extent * inner + i;
                                for k in 1..extent {
                                    let idx = (o * extent + k) * inner + i;
                                    if data[idx] < data[best] {
                                        best = idx;
                                    }
                                }
                                out[dst] = data[best];
                                argmin[dst] = best;
                            }
                        }
                    }
                }
                let mut oshape = shape.clone();
                oshape.remove(axis);
                Tensor {
                    shape: oshape,
                    data: out,
                }
            }
        };
        Ok(self.push(value, &[a], ReduceOp { kind, a, axis, argmin }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(a, ReduceKind::Sum, None).expect("tensors are never empty")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(a, ReduceKind::Mean, None).expect("tensors are never empty")
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, ReduceKind::Sum, Some(axis))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, ReduceKind::Mean, Some(axis))
    }

    pub fn min_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, ReduceKind::Min, Some(axis))
    }
}
