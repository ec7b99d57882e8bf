use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;
#[allow(unused_imports)]
use num_traits::Float;

/// Source taps for one output coordinate: `(i0, i1, w1)` with weight
/// `1 - w1` on `i0`.
fn taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            // align_corners = false; negative source coordinates clamp to 0
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, w1)
        })
        .collect()
}

struct ResizeOp {
    a: Var,
    ty: Vec<(usize, usize, f64)>,
    tx: Vec<(usize, usize, f64)>,
}

impl<T: Real> Backward<T> for ResizeOp {
    fn name(&self) -> &'static str {
        "bilinear_resize"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, _out: Var, grad: &[T]) {
        let s = ctx.value(self.a).shape().to_vec();
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (self.ty.len(), self.tx.len());
        let Some(ga) = ctx.grad_mut(self.a) else {
            return;
        };
        for plane in 0..s[0] * s[1] {
            let src = &mut ga[plane * h * w..(plane + 1) * h * w];
            let g = &grad[plane * oh * ow..(plane + 1) * oh * ow];
            for (oy, &(y0, y1, wy)) in self.ty.iter().enumerate() {
                let wy = T::c(wy);
                for (ox, &(x0, x1, wx)) in self.tx.iter().enumerate() {
                    let wx = T::c(wx);
                    let v = g[oy * ow + ox];
                    src[y0 * w + x0] += v * (T::one() - wy) * (T::one() - wx);
                    src[y0 * w + x1] += v * (T::one() - wy) * wx;
                    src[y1 * w + x0] += v * wy * (T::one() - wx);
                    src[y1 * w + x1] += v * wy * wx;
                }
            }
        }
    }
}

struct GridSampleOp {
    input: Var,
    grid: Var,
}

/// Border-clamped bilinear lookup geometry for one continuous coordinate.
#[inline(always)]
fn axis_tap<T: Real>(coord: T, extent: usize) -> (usize, usize, T, bool) {
    let hi = T::c((extent - 1) as f64);
    let inside = coord > T::zero() && coord < hi;
    let c = coord.max(T::zero()).min(hi);
    let i0 = c.floor().to_usize().unwrap_or(0).min(extent - 1);
    let i1 = (i0 + 1).min(extent - 1);
    (i0, i1, c - T::c(i0 as f64), inside)
}

impl<T: Real> Backward<T> for GridSampleOp {
    fn name(&self) -> &'static str {
        "grid_sample"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, out: Var, grad: &[T]) {
        let s = ctx.value(self.input).shape().to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let os = ctx.value(out).shape().to_vec();
        let (oh, ow) = (os[2], os[3]);
        let grid = ctx.value(self.grid).data().to_vec();
        let need_grid = ctx.requires_grad(self.grid);
        let mut ggrid = need_grid.then(|| vec![T::zero(); grid.len()]);
        let input = if need_grid {
            ctx.value(self.input).data().to_vec()
        } else {
            Vec::new()
        };
        let mut gin = ctx.requires_grad(self.input).then(|| vec![T::zero(); n * c * h * w]);
        let one = T::one();
        for b in 0..n {
            for p in 0..oh * ow {
                let gi = (b * oh * ow + p) * 2;
                let (x0, x1, wx, in_x) = axis_tap(grid[gi], w);
                let (y0, y1, wy, in_y) = axis_tap(grid[gi + 1], h);
                let (mut dx, mut dy) = (T::zero(), T::zero());
                for ch in 0..c {
                    let g = grad[((b * c + ch) * oh * ow) + p];
                    let base = (b * c + ch) * h * w;
                    if let Some(gin) = gin.as_mut() {
                        gin[base + y0 * w + x0] += g * (one - wy) * (one - wx);
                        gin[base + y0 * w + x1] += g * (one - wy) * wx;
                        gin[base + y1 * w + x0] += g * wy * (one - wx);
                        gin[base + y1 * w + x1] += g * wy * wx;
                    }
                    if need_grid {
                        let v00 = input[base + y0 * w + x0];
                        let v01 = input[base + y0 * w + x1];
                        let v10 = input[base + y1 * w + x0];
                        let v11 = input[base + y1 * w + x1];
                        if in_x {
                            dx += g * ((one - wy) * (v01 - v00) + wy * (v11 - v10));
                        }
                        if in_y {
                            dy += g * ((one - wx) * (v10 - v00) + wx * (v11 - v01));
                        }
                    }
                }
                if let Some(gg) = ggrid.as_mut() {
                    gg[gi] += dx;
                    gg[gi + 1] += dy;
                }
            }
        }
        if let Some(gin) = gin {
            ctx.accumulate(self.input, &gin);
        }
        if let Some(gg) = ggrid {
            ctx.accumulate(self.grid, &gg);
        }
    }
}

impl<T: Real> Tape<T> {
    /// Bilinear resize of an NCHW tensor (align-corners = false).
    pub fn bilinear_resize(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || out_h == 0 || out_w == 0 {
            return Err(Error::invalid("bilinear_resize", "needs NCHW input and positive output size"));
        }
        let (h, w) = (s[2], s[3]);
        let ty = taps(out_h, h);
        let tx = taps(out_w, w);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); s[0] * s[1] * out_h * out_w];
        for plane in 0..s[0] * s[1] {
            let img = &src[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                let wy = T::c(wy);
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let wx = T::c(wx);
                    let top = img[y0 * w + x0] * (T::one() - wx) + img[y0 * w + x1] * wx;
                    let bot = img[y1 * w + x0] * (T::one() - wx) + img[y1 * w + x1] * wx;
                    dst[oy * out_w + ox] = top * (T::one() - wy) + bot * wy;
                }
            }
        }
        let value = Tensor {
            shape: vec![s[0], s[1], out_h, out_w],
            data: out,
        };
        Ok(self.push(value, &[a], ResizeOp { a, ty, tx }))
    }

    /// Bilinear sampling of NCHW `input` at the pixel coordinates in `grid`
    /// (`[N, Ho, Wo, 2]`, last axis `(x, y)`). Coordinates outside the image
    /// clamp to the border.
    pub fn grid_sample(&mut self, input: Var, grid: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        let gs = self.shape(grid).to_vec();
        if s.len() != 4 || gs.len() != 4 || gs[3] != 2 || gs[0] != s[0] {
            return Err(Error::shape("grid_sample", &s, &gs));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (gs[1], gs[2]);
        let src = self.value(input).data();
        let g = self.value(grid).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        let one = T::one();
        for b in 0..n {
            for p in 0..oh * ow {
                let gi = (b * oh * ow + p) * 2;
                let (x0, x1, wx, _) = axis_tap(g[gi], w);
                let (y0, y1, wy, _) = axis_tap(g[gi + 1], h);
                for ch in 0..c {
                    let base = (b * c + ch) * h * w;
                    let top = src[base + y0 * w + x0] * (one - wx) + src[base + y0 * w + x1] * wx;
                    let bot = src[base + y1 * w + x0] * (one - wx) + src[base + y1 * w + x1] * wx;
                    out[(b * c + ch) * oh * ow + p] = top * (one - wy) + bot * wy;
                }
            }
        }
        let value = Tensor {
            shape: vec![n, c, oh, ow],
            data: out,
        };
        Ok(self.push(value, &[input, grid], GridSampleOp { input, grid }))
    }
}
