use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient rule of one recorded operation.
pub trait Backward<T: Real> {
    fn name(&self) -> &'static str;
    /// Propagates `grad` (the gradient w.r.t. this node's output `out`) to
    /// the operation's inputs.
    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, out: Var, grad: &[T]);
}

/// Read access to forward values and write access to input gradients.
pub struct BackwardCtx<'a, T> {
    values: &'a [Tensor<T>],
    requires: &'a [bool],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Real> BackwardCtx<'_, T> {
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Mutable gradient buffer of `v`, allocated on first use; `None` when
    /// `v` does not require a gradient.
    pub fn grad_mut(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.requires[v.0] {
            return None;
        }
        let n = self.values[v.0].numel();
        Some(
            self.grads[v.0]
                .get_or_insert_with(|| vec![T::zero(); n])
                .as_mut_slice(),
        )
    }

    /// Value of `a` together with the gradient buffer of `b`.
    pub fn value_and_grad(&mut self, a: Var, b: Var) -> (&Tensor<T>, Option<&mut [T]>) {
        if !self.requires[b.0] {
            return (&self.values[a.0], None);
        }
        let n = self.values[b.0].numel();
        let g = self.grads[b.0]
            .get_or_insert_with(|| vec![T::zero(); n])
            .as_mut_slice();
        (&self.values[a.0], Some(g))
    }

    pub fn accumulate(&mut self, v: Var, g: &[T]) {
        if let Some(dst) = self.grad_mut(v) {
            for (d, &s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        }
    }
}

/// Append-only record of a differentiable computation.
pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    requires: Vec<bool>,
    leaf: Vec<bool>,
    ops: Vec<Option<Box<dyn Backward<T>>>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            requires: Vec::new(),
            leaf: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.requires.push(requires_grad);
        self.leaf.push(true);
        self.ops.push(None);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records the result of an operation over `inputs`. The backward rule is
    /// kept only when some input requires a gradient.
    pub fn push<B: Backward<T> + 'static>(&mut self, value: Tensor<T>, inputs: &[Var], op: B) -> Var {
        let requires = inputs.iter().any(|v| self.requires[v.0]);
        self.values.push(value);
        self.requires.push(requires);
        self.leaf.push(false);
        self.ops
            .push(if requires { Some(Box::new(op)) } else { None });
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads[v.0].take()
    }

    /// Copy of `v`'s value as a new constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.values[v.0].clone();
        self.constant(t)
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// multiple uses; intermediate gradients are released once consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.sweep(loss, &mut |_, _| {})
    }

    /// [`Tape::backward`] reporting the time spent in each backward op kind,
    /// measured with `clock` (seconds), sorted by decreasing total.
    pub fn backward_profiled(&mut self, loss: Var, clock: &dyn Fn() -> f64) -> Result<Vec<(&'static str, f64)>> {
        let mut totals: Vec<(&'static str, f64)> = Vec::new();
        let mut start = 0.0;
        self.sweep(loss, &mut |name, begin| {
            if begin {
                start = clock();
                return;
            }
            let dt = clock() - start;
            match totals.iter_mut().find(|(n, _)| *n == name) {
                Some(e) => e.1 += dt,
                None => totals.push((name, dt)),
            }
        })?;
        totals.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(totals)
    }

    fn sweep(&mut self, loss: Var, hook: &mut dyn FnMut(&'static str, bool)) -> Result<()> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::NonScalarLoss(self.values[loss.0].shape().to_vec()));
        }
        if !self.requires[loss.0] {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(op) = self.ops[i].as_ref() else {
                continue;
            };
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let mut ctx = BackwardCtx {
                values: &self.values,
                requires: &self.requires,
                grads: &mut self.grads,
            };
            hook(op.name(), true);
            op.backward(&mut ctx, Var(i), &g);
            hook(op.name(), false);
            if self.leaf[i] {
                self.grads[i] = Some(g);
            }
        }
        Ok(())
    }
}
