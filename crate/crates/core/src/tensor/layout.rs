use alloc::vec::Vec;

use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

struct ReshapeOp {
    a: Var,
}

impl<T: Real> Backward<T> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, _out: Var, grad: &[T]) {
        ctx.accumulate(self.a, grad);
    }
}

struct NarrowOp {
    a: Var,
    axis: usize,
    start: usize,
}

impl<T: Real> Backward<T> for NarrowOp {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, out: Var, grad: &[T]) {
        let shape = ctx.value(self.a).shape().to_vec();
        let len = ctx.value(out).shape()[self.axis];
        let Some(ga) = ctx.grad_mut(self.a) else {
            return;
        };
        let outer: usize = shape[..self.axis].iter().product();
        let inner: usize = shape[self.axis + 1..].iter().product();
        let extent = shape[self.axis];
        for o in 0..outer {
            let src = &grad[o * len * inner..(o + 1) * len * inner];
            let dst = &mut ga[(o * extent + self.start) * inner..(o * extent + self.start + len) * inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

struct ConcatOp {
    parts: Vec<Var>,
    axis: usize,
}

impl<T: Real> Backward<T> for ConcatOp {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, out: Var, grad: &[T]) {
        let oshape = ctx.value(out).shape().to_vec();
        let outer: usize = oshape[..self.axis].iter().product();
        let inner: usize = oshape[self.axis + 1..].iter().product();
        let total = oshape[self.axis];
        let mut offset = 0;
        for &p in &self.parts {
            let extent = ctx.value(p).shape()[self.axis];
            if let Some(gp) = ctx.grad_mut(p) {
                for o in 0..outer {
                    let src = &grad[(o * total + offset) * inner..(o * total + offset + extent) * inner];
                    let dst = &mut gp[o * extent * inner..(o + 1) * extent * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            offset += extent;
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, &[a], ReshapeOp { a }))
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(
                "narrow",
                alloc::format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src.data()[(o * extent + start) * inner..(o * extent + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let value = Tensor { shape: oshape, data };
        Ok(self.push(value, &[a], NarrowOp { a, axis, start }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", "axis out of range"));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let extent = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * extent * inner..(o + 1) * extent * inner]);
            }
        }
        let mut oshape = base;
        oshape[axis] = total;
        let value = Tensor { shape: oshape, data };
        Ok(self.push(
            value,
            parts,
            ConcatOp {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }
}
