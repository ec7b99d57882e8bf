use alloc::vec::Vec;

use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::{broadcast_shape, broadcast_strides, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    /// Ties route the gradient to the first operand.
    Min,
    /// Ties route the gradient to the first operand.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Sigmoid,
    Relu,
    /// ELU with unit alpha.
    Elu,
    Exp,
    /// Gradient at zero is zero.
    Abs,
    /// Gradient passes on `[lo, hi]`.
    Clamp { lo: f64, hi: f64 },
    Softplus,
    Recip,
    Square,
    Sqrt,
    /// `scale * x + shift`.
    Affine { scale: f64, shift: f64 },
}

fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    let n: usize = out.iter().product();
    let mut idx = alloc::vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[inline(always)]
fn apply<T: Real>(kind: BinaryKind, x: T, y: T) -> T {
    match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
        BinaryKind::Min => {
            if y < x {
                y
            } else {
                x
            }
        }
        BinaryKind::Max => {
            if y > x {
                y
            } else {
                x
            }
        }
    }
}

/// Local partial derivatives `(d/dx, d/dy)`.
#[inline(always)]
fn partials<T: Real>(kind: BinaryKind, x: T, y: T) -> (T, T) {
    let (one, zero) = (T::one(), T::zero());
    match kind {
        BinaryKind::Add => (one, one),
        BinaryKind::Sub => (one, -one),
        BinaryKind::Mul => (y, x),
        BinaryKind::Div => (one / y, -x / (y * y)),
        BinaryKind::Min => {
            if y < x {
                (zero, one)
            } else {
                (one, zero)
            }
        }
        BinaryKind::Max => {
            if y > x {
                (zero, one)
            } else {
                (one, zero)
            }
        }
    }
}

struct BinaryOp {
    kind: BinaryKind,
    a: Var,
    b: Var,
    sa: Vec<usize>,
    sb: Vec<usize>,
    out_shape: Vec<usize>,
    same: bool,
}

impl<T: Real> Backward<T> for BinaryOp {
    fn name(&self) -> &'static str {
        "binary"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, _out: Var, grad: &[T]) {
        let av = ctx.value(self.a).data().to_vec();
        let bv = ctx.value(self.b).data().to_vec();
        let mut ga = ctx.requires_grad(self.a).then(|| alloc::vec![T::zero(); av.len()]);
        let mut gb = ctx.requires_grad(self.b).then(|| alloc::vec![T::zero(); bv.len()]);
        let mut step = |o: usize, ia: usize, ib: usize| {
            let (da, db) = partials(self.kind, av[ia], bv[ib]);
            if let Some(ga) = ga.as_mut() {
                ga[ia] += grad[o] * da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += grad[o] * db;
            }
        };
        if self.same {
            for o in 0..grad.len() {
                step(o, o, o);
            }
        } else {
            for_each_broadcast(&self.out_shape, &self.sa, &self.sb, step);
        }
        if let Some(ga) = ga {
            ctx.accumulate(self.a, &ga);
        }
        if let Some(gb) = gb {
            ctx.accumulate(self.b, &gb);
        }
    }
}

struct UnaryOp {
    kind: UnaryKind,
    a: Var,
}

impl<T: Real> Backward<T> for UnaryOp {
    fn name(&self) -> &'static str {
        "unary"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, out: Var, grad: &[T]) {
        let x = ctx.value(self.a).data().to_vec();
        let y = ctx.value(out).data().to_vec();
        let Some(ga) = ctx.grad_mut(self.a) else {
            return;
        };
        let one = T::one();
        let zero = T::zero();
        for i in 0..ga.len() {
            let d = match self.kind {
                UnaryKind::Sigmoid => y[i] * (one - y[i]),
                UnaryKind::Relu => {
                    if x[i] > zero {
                        one
                    } else {
                        zero
                    }
                }
                UnaryKind::Elu => {
                    if x[i] > zero {
                        one
                    } else {
                        y[i] + one
                    }
                }
                UnaryKind::Exp => y[i],
                UnaryKind::Abs => {
                    if x[i] > zero {
                        one
                    } else if x[i] < zero {
                        -one
                    } else {
                        zero
                    }
                }
                UnaryKind::Clamp { lo, hi } => {
                    if x[i] >= T::c(lo) && x[i] <= T::c(hi) {
                        one
                    } else {
                        zero
                    }
                }
                UnaryKind::Softplus => sigmoid(x[i]),
                UnaryKind::Recip => -y[i] * y[i],
                UnaryKind::Square => T::c(2.0) * x[i],
                UnaryKind::Sqrt => T::c(0.5) / y[i],
                UnaryKind::Affine { scale, .. } => T::c(scale),
            };
            ga[i] += grad[i] * d;
        }
    }
}

#[inline(always)]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline(always)]
fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn unary_value<T: Real>(kind: UnaryKind, x: T) -> T {
    match kind {
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Relu => x.max(T::zero()),
        UnaryKind::Elu => {
            if x > T::zero() {
                x
            } else {
                x.exp_m1()
            }
        }
        UnaryKind::Exp => x.exp(),
        UnaryKind::Abs => x.abs(),
        UnaryKind::Clamp { lo, hi } => x.max(T::c(lo)).min(T::c(hi)),
        UnaryKind::Softplus => softplus(x),
        UnaryKind::Recip => T::one() / x,
        UnaryKind::Square => x * x,
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Affine { scale, shift } => T::c(scale) * x + T::c(shift),
    }
}

impl<T: Real> Tape<T> {
    pub fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (sa_shape, sb_shape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa_shape, &sb_shape)
            .ok_or_else(|| Error::shape("elementwise", &sa_shape, &sb_shape))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let same = sa_shape == sb_shape;
        let n: usize = out_shape.iter().product();
        let mut out = alloc::vec![T::zero(); n];
        let sa = broadcast_strides(&sa_shape, &out_shape);
        let sb = broadcast_strides(&sb_shape, &out_shape);
        if same {
            for ((o, &x), &y) in out.iter_mut().zip(av).zip(bv) {
                *o = apply(kind, x, y);
            }
        } else {
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                out[o] = apply(kind, av[ia], bv[ib]);
            });
        }
        let value = Tensor {
            shape: out_shape.clone(),
            data: out,
        };
        Ok(self.push(
            value,
            &[a, b],
            BinaryOp {
                kind,
                a,
                b,
                sa,
                sb,
                out_shape,
                same,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Div)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Min)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Max)
    }

    pub fn unary(&mut self, a: Var, kind: UnaryKind) -> Result<Var> {
        if let UnaryKind::Clamp { lo, hi } = kind {
            if !(lo < hi) {
                return Err(Error::invalid("clamp", "requires lo < hi"));
            }
        }
        let value = self.value(a).map(|x| unary_value(kind, x));
        Ok(self.push(value, &[a], UnaryOp { kind, a }))
    }

    fn unary_ok(&mut self, a: Var, kind: UnaryKind) -> Var {
        let value = self.value(a).map(|x| unary_value(kind, x));
        self.push(value, &[a], UnaryOp { kind, a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary_ok(a, UnaryKind::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary_ok(a, UnaryKind::Relu)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary_ok(a, UnaryKind::Elu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary_ok(a, UnaryKind::Exp)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary_ok(a, UnaryKind::Abs)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary_ok(a, UnaryKind::Softplus)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary_ok(a, UnaryKind::Recip)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary_ok(a, UnaryKind::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary_ok(a, UnaryKind::Sqrt)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, UnaryKind::Clamp { lo, hi })
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary_ok(a, UnaryKind::Affine { scale, shift })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }
}
