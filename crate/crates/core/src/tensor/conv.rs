use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy)]
struct Geom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

impl Geom {
    /// Output columns `ox` whose input column `ox*stride + kx - pad` lies
    /// inside the image.
    fn valid_x(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride);
        let hi = (self.w + self.pad).saturating_sub(kx + 1) / self.stride + 1;
        (lo.min(self.wo), hi.min(self.wo).max(lo.min(self.wo)))
    }
}

/// Unfolds one image `[ci, h, w]` into `[ci*k*k, ho*wo]` with zero padding.
fn im2col<T: Real>(g: &Geom, img: &[T], cols: &mut [T]) {
    let hw = g.cols();
    for c in 0..g.ci {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (x0, x1) = g.valid_x(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || x0 == x1 {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &img[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    line[..x0].fill(T::zero());
                    line[x1..].fill(T::zero());
                    let ix0 = x0 * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                    } else {
                        for (d, s) in line[x0..x1].iter_mut().zip(src[ix0..].iter().step_by(g.stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into `img` (accumulating).
fn col2im<T: Real>(g: &Geom, cols: &[T], img: &mut [T]) {
    let hw = g.cols();
    for c in 0..g.ci {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (x0, x1) = g.valid_x(kx);
                if x0 == x1 {
                    continue;
                }
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    let line = &src[oy * g.wo + x0..oy * g.wo + x1];
                    let ix0 = base + x0 * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, s) in img[ix0..ix0 + line.len()].iter_mut().zip(line) {
                            *d += *s;
                        }
                    } else {
                        for (d, s) in img[ix0..].iter_mut().step_by(g.stride).zip(line) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    geom: Geom,
}

impl<T: Real> Backward<T> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, _out: Var, grad: &[T]) {
        let g = self.geom;
        let (rows, hw) = (g.rows(), g.cols());
        let in_plane = g.ci * g.h * g.w;
        let out_plane = g.co * hw;
        let need_in = ctx.requires_grad(self.input);
        let need_k = ctx.requires_grad(self.kernel);

        if let Some(b) = self.bias {
            if let Some(gb) = ctx.grad_mut(b) {
                for n in 0..g.n {
                    for o in 0..g.co {
                        let s: T = grad[n * out_plane + o * hw..n * out_plane + (o + 1) * hw]
                            .iter()
                            .copied()
                            .sum();
                        gb[o] += s;
                    }
                }
            }
        }
        if !need_in && !need_k {
            return;
        }
        let input = ctx.value(self.input).data().to_vec();
        let kernel = ctx.value(self.kernel).data().to_vec();
        let mut cols = vec![T::zero(); rows * hw];
        let mut gk = need_k.then(|| vec![T::zero(); kernel.len()]);
        let mut gin = need_in.then(|| vec![T::zero(); input.len()]);
        for n in 0..g.n {
            let gout = &grad[n * out_plane..(n + 1) * out_plane];
            if let Some(gk) = gk.as_mut() {
                im2col(&g, &input[n * in_plane..(n + 1) * in_plane], &mut cols);
                // gk[co, rows] += gout[co, hw] * cols^T[hw, rows]
                T::gemm(
                    g.co,
                    hw,
                    rows,
                    T::one(),
                    gout,
                    (hw as isize, 1),
                    &cols,
                    (1, hw as isize),
                    T::one(),
                    gk,
                    rows as isize,
                );
            }
            if let Some(gin) = gin.as_mut() {
                // cols[rows, hw] = kernel^T[rows, co] * gout[co, hw]
                T::gemm(
                    rows,
                    g.co,
                    hw,
                    T::one(),
                    &kernel,
                    (1, rows as isize),
                    gout,
                    (hw as isize, 1),
                    T::zero(),
                    &mut cols,
                    hw as isize,
                );
                col2im(&g, &cols, &mut gin[n * in_plane..(n + 1) * in_plane]);
            }
        }
        if let Some(gk) = gk {
            ctx.accumulate(self.kernel, &gk);
        }
        if let Some(gin) = gin {
            ctx.accumulate(self.input, &gin);
        }
    }
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of an NCHW input with an OIKK kernel, zero padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if is.len() != 4 || ks.len() != 4 || ks[2] != ks[3] {
            return Err(Error::shape("conv2d", &is, &ks));
        }
        if is[1] != ks[1] {
            return Err(Error::shape("conv2d", &is, &ks));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ks[0]] {
                return Err(Error::shape("conv2d bias", self.shape(b), &[ks[0]]));
            }
        }
        let k = ks[2];
        if is[2] + 2 * pad < k || is[3] + 2 * pad < k {
            return Err(Error::shape("conv2d", &is, &ks));
        }
        let g = Geom {
            n: is[0],
            ci: is[1],
            h: is[2],
            w: is[3],
            co: ks[0],
            k,
            stride,
            pad,
            ho: (is[2] + 2 * pad - k) / stride + 1,
            wo: (is[3] + 2 * pad - k) / stride + 1,
        };
        let (rows, hw) = (g.rows(), g.cols());
        let in_plane = g.ci * g.h * g.w;
        let out_plane = g.co * hw;
        let mut out = vec![T::zero(); g.n * out_plane];
        let mut cols = vec![T::zero(); rows * hw];
        {
            let x = self.value(input).data();
            let w = self.value(kernel).data();
            let bias_v = bias.map(|b| self.value(b).data());
            for n in 0..g.n {
                im2col(&g, &x[n * in_plane..(n + 1) * in_plane], &mut cols);
                let dst = &mut out[n * out_plane..(n + 1) * out_plane];
                if let Some(bv) = bias_v {
                    for o in 0..g.co {
                        dst[o * hw..(o + 1) * hw].fill(bv[o]);
                    }
                }
                T::gemm(
                    g.co,
                    rows,
                    hw,
                    T::one(),
                    w,
                    (rows as isize, 1),
                    &cols,
                    (hw as isize, 1),
                    if bias_v.is_some() { T::one() } else { T::zero() },
                    dst,
                    hw as isize,
                );
            }
        }
        let value = Tensor {
            shape: vec![g.n, g.co, g.ho, g.wo],
            data: out,
        };
        let mut inputs: Vec<Var> = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(
            value,
            &inputs,
            Conv2dOp {
                input,
                kernel,
                bias,
                geom: g,
            },
        ))
    }
}
