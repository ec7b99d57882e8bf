//! Unsupervised depth losses: SSIM + L1 photometric error, per-pixel minimum
//! over sources with automasking, and edge-aware disparity smoothness.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Backward, BackwardCtx, Tape, Tensor, Var};

/// Number of predicted disparity scales.
pub const NUM_SCALES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// SSIM weight in the photometric mix.
    pub rho: f64,
    /// Edge-aware smoothness weight at the finest scale.
    pub smoothness: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            rho: 0.85,
            smoothness: 1e-3,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(alloc::format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.smoothness >= 0.0) {
            return Err(Error::Config("smoothness weight must be non-negative".into()));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Config("SSIM constants must be positive".into()));
        }
        Ok(())
    }
}

#[inline(always)]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Index of the left/right (or upper/lower) tap of position `i` on an axis of
/// length `n`, with reflection.
#[inline(always)]
fn taps(i: usize, n: usize) -> (usize, usize) {
    (reflect(i as isize - 1, n), reflect(i as isize + 1, n))
}

/// 3×3 mean filter with reflection padding, as a horizontal then a vertical
/// 3-tap sum. `scratch` holds `h*w` values.
fn box3<T: Real>(src: &[T], h: usize, w: usize, out: &mut [T], scratch: &mut [T]) {
    let ninth = T::c(1.0 / 9.0);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let dst = &mut scratch[y * w..(y + 1) * w];
        for x in 0..w {
            let (l, r) = taps(x, w);
            dst[x] = row[l] + row[x] + row[r];
        }
    }
    for y in 0..h {
        let (u, d) = taps(y, h);
        let (ru, rc, rd) = (&scratch[u * w..(u + 1) * w], &scratch[y * w..(y + 1) * w], &scratch[d * w..(d + 1) * w]);
        for (x, o) in out[y * w..(y + 1) * w].iter_mut().enumerate() {
            *o = (ru[x] + rc[x] + rd[x]) * ninth;
        }
    }
}

/// Adjoint of [`box3`], accumulating into `out`.
fn box3_adjoint<T: Real>(g: &[T], h: usize, w: usize, out: &mut [T], scratch: &mut [T]) {
    let ninth = T::c(1.0 / 9.0);
    scratch.fill(T::zero());
    for y in 0..h {
        let (u, d) = taps(y, h);
        for x in 0..w {
            let v = g[y * w + x] * ninth;
            scratch[u * w + x] += v;
            scratch[y * w + x] += v;
            scratch[d * w + x] += v;
        }
    }
    for y in 0..h {
        let row = &scratch[y * w..(y + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        for x in 0..w {
            let (l, r) = taps(x, w);
            let v = row[x];
            dst[l] += v;
            dst[x] += v;
            dst[r] += v;
        }
    }
}

/// Local SSIM statistics of one channel plane.
struct Stats<T> {
    mu_a: Vec<T>,
    mu_b: Vec<T>,
    var_a: Vec<T>,
    var_b: Vec<T>,
    cov: Vec<T>,
}

fn plane_stats<T: Real>(a: &[T], b: &[T], h: usize, w: usize) -> Stats<T> {
    let n = h * w;
    let mut s = Stats {
        mu_a: vec![T::zero(); n],
        mu_b: vec![T::zero(); n],
        var_a: vec![T::zero(); n],
        var_b: vec![T::zero(); n],
        cov: vec![T::zero(); n],
    };
    let mut tmp = vec![T::zero(); n];
    let mut scratch = vec![T::zero(); n];
    box3(a, h, w, &mut s.mu_a, &mut scratch);
    box3(b, h, w, &mut s.mu_b, &mut scratch);
    for i in 0..n {
        tmp[i] = a[i] * a[i];
    }
    box3(&tmp, h, w, &mut s.var_a, &mut scratch);
    for i in 0..n {
        tmp[i] = b[i] * b[i];
    }
    box3(&tmp, h, w, &mut s.var_b, &mut scratch);
    for i in 0..n {
        tmp[i] = a[i] * b[i];
    }
    box3(&tmp, h, w, &mut s.cov, &mut scratch);
    for i in 0..n {
        s.var_a[i] -= s.mu_a[i] * s.mu_a[i];
        s.var_b[i] -= s.mu_b[i] * s.mu_b[i];
        s.cov[i] -= s.mu_a[i] * s.mu_b[i];
    }
    s
}

/// Photometric error map `(ρ/2)(1 - SSIM) + (1-ρ)|a - b|`, both terms averaged
/// over channels. `a`, `b` are `[n, c, h, w]`; the result is `[n, 1, h, w]`.
pub fn photometric_values<T: Real>(a: &Tensor<T>, b: &Tensor<T>, cfg: &LossConfig) -> Result<Tensor<T>> {
    if a.shape() != b.shape() || a.rank() != 4 {
        return Err(Error::shape("photometric_map", a.shape(), b.shape()));
    }
    let s = a.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let hw = h * w;
    let (c1, c2) = (T::c(cfg.c1), T::c(cfg.c2));
    let ws = T::c(cfg.rho / 2.0 / c as f64);
    let wl = T::c((1.0 - cfg.rho) / c as f64);
    let two = T::c(2.0);
    let mut out = vec![T::zero(); n * hw];
    for b_i in 0..n {
        let dst = &mut out[b_i * hw..(b_i + 1) * hw];
        for ch in 0..c {
            let off = (b_i * c + ch) * hw;
            let pa = &a.data()[off..off + hw];
            let pb = &b.data()[off..off + hw];
            let st = plane_stats(pa, pb, h, w);
            for i in 0..hw {
                let num = (two * st.mu_a[i] * st.mu_b[i] + c1) * (two * st.cov[i] + c2);
                let den = (st.mu_a[i] * st.mu_a[i] + st.mu_b[i] * st.mu_b[i] + c1)
                    * (st.var_a[i] + st.var_b[i] + c2);
                dst[i] += ws * (T::one() - num / den) + wl * (pa[i] - pb[i]).abs();
            }
        }
    }
    Tensor::new(&[n, 1, h, w], out)
}

struct PhotometricOp {
    a: Var,
    b: Var,
    cfg: LossConfig,
}

impl<T: Real> Backward<T> for PhotometricOp {
    fn name(&self) -> &'static str {
        "photometric_map"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, _out: Var, grad: &[T]) {
        let s = ctx.value(self.a).shape().to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = h * w;
        let av = ctx.value(self.a).data().to_vec();
        let bv = ctx.value(self.b).data().to_vec();
        let need_a = ctx.requires_grad(self.a);
        let need_b = ctx.requires_grad(self.b);
        let mut ga = need_a.then(|| vec![T::zero(); av.len()]);
        let mut gb = need_b.then(|| vec![T::zero(); bv.len()]);
        let (c1, c2) = (T::c(self.cfg.c1), T::c(self.cfg.c2));
        let ws = T::c(self.cfg.rho / 2.0 / c as f64);
        let wl = T::c((1.0 - self.cfg.rho) / c as f64);
        let two = T::c(2.0);
        let zero = T::zero();
        let mut maps: [Vec<T>; 5] = core::array::from_fn(|_| vec![zero; hw]);
        let mut adj: [Vec<T>; 5] = core::array::from_fn(|_| vec![zero; hw]);
        let mut scratch = vec![zero; hw];
        for b_i in 0..n {
            let g = &grad[b_i * hw..(b_i + 1) * hw];
            for ch in 0..c {
                let off = (b_i * c + ch) * hw;
                let pa = &av[off..off + hw];
                let pb = &bv[off..off + hw];
                let st = plane_stats(pa, pb, h, w);
                // maps: [G_a, G_b, H_a, H_b, J] upstream of box(a), box(b),
                // box(a²), box(b²), box(ab)
                for i in 0..hw {
                    let (ma, mb) = (st.mu_a[i], st.mu_b[i]);
                    let n1 = two * ma * mb + c1;
                    let n2 = two * st.cov[i] + c2;
                    let d1 = ma * ma + mb * mb + c1;
                    let d2 = st.var_a[i] + st.var_b[i] + c2;
                    let den = d1 * d2;
                    let ssim = n1 * n2 / den;
                    let gs = -ws * g[i];
                    let ds_ma = two * mb * n2 / den - two * ma * ssim / d1;
                    let ds_mb = two * ma * n2 / den - two * mb * ssim / d1;
                    let ds_cov = two * n1 / den;
                    let ds_var = -ssim / d2;
                    maps[0][i] = gs * (ds_ma - two * ma * ds_var - mb * ds_cov);
                    maps[1][i] = gs * (ds_mb - two * mb * ds_var - ma * ds_cov);
                    maps[2][i] = gs * ds_var;
                    maps[3][i] = gs * ds_var;
                    maps[4][i] = gs * ds_cov;
                }
                for k in 0..5 {
                    adj[k].fill(zero);
                    box3_adjoint(&maps[k], h, w, &mut adj[k], &mut scratch);
                }
                for i in 0..hw {
                    let l1 = wl * g[i] * sign(pa[i] - pb[i]);
                    if let Some(ga) = ga.as_mut() {
                        ga[off + i] += adj[0][i] + two * pa[i] * adj[2][i] + pb[i] * adj[4][i] + l1;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[off + i] += adj[1][i] + two * pb[i] * adj[3][i] + pa[i] * adj[4][i] - l1;
                    }
                }
            }
        }
        if let Some(ga) = ga {
            ctx.accumulate(self.a, &ga);
        }
        if let Some(gb) = gb {
            ctx.accumulate(self.b, &gb);
        }
    }
}

#[inline(always)]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

struct SmoothnessOp {
    disp: Var,
    image: Var,
}

/// `exp(-|∂I|)` edge weights along x and y, channel-averaged.
fn edge_weights<T: Real>(img: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<T>) {
    let hw = h * w;
    let mut wx = vec![T::zero(); hw];
    let mut wy = vec![T::zero(); hw];
    let inv_c = T::c(1.0 / c as f64);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for ch in 0..c {
                let p = &img[ch * hw..(ch + 1) * hw];
                if x + 1 < w {
                    gx += (p[i + 1] - p[i]).abs();
                }
                if y + 1 < h {
                    gy += (p[i + w] - p[i]).abs();
                }
            }
            wx[i] = (-gx * inv_c).exp();
            wy[i] = (-gy * inv_c).exp();
        }
    }
    (wx, wy)
}

impl<T: Real> Backward<T> for SmoothnessOp {
    fn name(&self) -> &'static str {
        "smoothness_map"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, _out: Var, grad: &[T]) {
        let s = ctx.value(self.disp).shape().to_vec();
        let (n, h, w) = (s[0], s[2], s[3]);
        let c = ctx.value(self.image).shape()[1];
        let hw = h * w;
        let disp = ctx.value(self.disp).data().to_vec();
        let img = ctx.value(self.image).data().to_vec();
        let Some(gd) = ctx.grad_mut(self.disp) else {
            return;
        };
        let mut gstar = vec![T::zero(); hw];
        for b in 0..n {
            let d = &disp[b * hw..(b + 1) * hw];
            let m = d.iter().copied().sum::<T>() / T::c(hw as f64);
            let (wx, wy) = edge_weights(&img[b * c * hw..(b + 1) * c * hw], c, h, w);
            let g = &grad[b * hw..(b + 1) * hw];
            gstar.fill(T::zero());
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if x + 1 < w {
                        let s = sign(d[i + 1] - d[i]) * wx[i] * g[i];
                        gstar[i + 1] += s;
                        gstar[i] -= s;
                    }
                    if y + 1 < h {
                        let s = sign(d[i + w] - d[i]) * wy[i] * g[i];
                        gstar[i + w] += s;
                        gstar[i] -= s;
                    }
                }
            }
            // d* = d / m: chain through the per-image mean
            let proj: T = gstar.iter().zip(d).map(|(&g, &v)| g * v).sum::<T>() / (m * T::c(hw as f64));
            for i in 0..hw {
                gd[b * hw + i] += (gstar[i] - proj) / m;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn photometric_map(&mut self, a: Var, b: Var, cfg: &LossConfig) -> Result<Var> {
        let value = photometric_values(self.value(a), self.value(b), cfg)?;
        Ok(self.push(value, &[a, b], PhotometricOp { a, b, cfg: *cfg }))
    }

    /// Edge-aware smoothness of mean-normalized disparity `[n, 1, h, w]`
    /// against image `[n, c, h, w]`; the image receives no gradient.
    pub fn smoothness_map(&mut self, disp: Var, image: Var) -> Result<Var> {
        let ds = self.shape(disp).to_vec();
        let is = self.shape(image).to_vec();
        if ds.len() != 4 || is.len() != 4 || ds[1] != 1 || ds[0] != is[0] || ds[2..] != is[2..] {
            return Err(Error::shape("smoothness_map", &ds, &is));
        }
        let (n, h, w, c) = (ds[0], ds[2], ds[3], is[1]);
        let hw = h * w;
        let d_all = self.value(disp).data();
        let img = self.value(image).data();
        let mut out = vec![T::zero(); n * hw];
        for b in 0..n {
            let d = &d_all[b * hw..(b + 1) * hw];
            let m = d.iter().copied().sum::<T>() / T::c(hw as f64);
            if !(m.abs() > T::zero()) {
                return Err(Error::invalid("smoothness_map", "disparity mean is zero"));
            }
            let (wx, wy) = edge_weights(&img[b * c * hw..(b + 1) * c * hw], c, h, w);
            let dst = &mut out[b * hw..(b + 1) * hw];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let mut v = T::zero();
                    if x + 1 < w {
                        v += ((d[i + 1] - d[i]) / m).abs() * wx[i];
                    }
                    if y + 1 < h {
                        v += ((d[i + w] - d[i]) / m).abs() * wy[i];
                    }
                    dst[i] = v;
                }
            }
        }
        let value = Tensor::new(&[n, 1, h, w], out)?;
        Ok(self.push(value, &[disp, image], SmoothnessOp { disp, image }))
    }
}

/// Result of the automasked minimum photometric error.
pub struct MaskedPhotometric {
    /// `P · mask`, `[n, 1, h, w]`.
    pub loss: Var,
    /// 1 where the warped error beats the unwarped (identity) error.
    pub mask: Tensor<f64>,
}

/// Per-pixel minimum over sources of the photometric error, automasked
/// against the identity error of the unwarped sources (strict inequality).
pub fn masked_min_photometric<T: Real>(
    tape: &mut Tape<T>,
    target: Var,
    warped: &[Var],
    sources: &[Var],
    cfg: &LossConfig,
) -> Result<MaskedPhotometric> {
    let identity = identity_error(tape, target, sources, cfg)?;
    masked_min_with_identity(tape, target, warped, &identity, cfg)
}

/// `min_j photometric(target, source_j)`, outside the tape.
pub fn identity_error<T: Real>(tape: &Tape<T>, target: Var, sources: &[Var], cfg: &LossConfig) -> Result<Tensor<T>> {
    let mut best: Option<Tensor<T>> = None;
    for &s in sources {
        let p = photometric_values(tape.value(target), tape.value(s), cfg)?;
        best = Some(match best {
            None => p,
            Some(mut b) => {
                for (x, &y) in b.data_mut().iter_mut().zip(p.data()) {
                    if y < *x {
                        *x = y;
                    }
                }
                b
            }
        });
    }
    best.ok_or_else(|| Error::invalid("masked_min_photometric", "needs at least one source"))
}

pub(crate) fn masked_min_with_identity<T: Real>(
    tape: &mut Tape<T>,
    target: Var,
    warped: &[Var],
    identity: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<MaskedPhotometric> {
    let (first, rest) = warped
        .split_first()
        .ok_or_else(|| Error::invalid("masked_min_photometric", "needs at least one source"))?;
    let mut p = tape.photometric_map(target, *first, cfg)?;
    for &w in rest {
        let pj = tape.photometric_map(target, w, cfg)?;
        p = tape.minimum(p, pj)?;
    }
    if tape.shape(p) != identity.shape() {
        return Err(Error::shape("masked_min_photometric", tape.shape(p), identity.shape()));
    }
    let mask_t: Vec<T> = tape
        .value(p)
        .data()
        .iter()
        .zip(identity.data())
        .map(|(&a, &b)| if a < b { T::one() } else { T::zero() })
        .collect();
    let mask = Tensor::new(identity.shape(), mask_t)?;
    let mask_f64 = mask.cast::<f64>();
    let m = tape.constant(mask);
    let loss = tape.mul(p, m)?;
    Ok(MaskedPhotometric { loss, mask: mask_f64 })
}

/// Batched inputs of the depth task loss. Image variables are `[n, 3, h, w]`;
/// `disps` are the full-resolution sigmoid disparities, finest first.
pub struct DepthLossInputs<'a> {
    pub target: Var,
    pub sources: &'a [Var],
    pub disps: &'a [Var],
    /// One `[n, 3]` axis-angle per source.
    pub axis_angles: &'a [Var],
    /// One `[n, 3]` translation per source.
    pub translations: &'a [Var],
    /// `[n, 4]` intrinsics rows.
    pub intrinsics: Var,
    /// Per-sample `(min_depth, max_depth)` of the disparity mapping.
    pub depth_bounds: &'a [(f64, f64)],
}

pub struct DepthLoss {
    pub loss: Var,
    /// `warped[i][j]`: target synthesized from source `j` with scale `i`.
    pub warped: Vec<Vec<Var>>,
    /// Fraction of pixels kept by the automask, per scale.
    pub mask_keep: Vec<f64>,
}

/// Per-sample affine-inverse disparity mapping with batch-varying bounds.
pub fn disp_to_depth_batch<T: Real>(tape: &mut Tape<T>, disp: Var, bounds: &[(f64, f64)]) -> Result<Var> {
    let n = tape.shape(disp)[0];
    if bounds.len() != n {
        return Err(Error::shape("disp_to_depth", tape.shape(disp), &[bounds.len()]));
    }
    if let [(lo, hi)] = bounds {
        return tape.disp_to_depth(disp, *lo, *hi);
    }
    let mut scale = Vec::with_capacity(n);
    let mut shift = Vec::with_capacity(n);
    for &(lo, hi) in bounds {
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Config(alloc::format!("depth bounds [{lo}, {hi}]")));
        }
        scale.push(T::c(1.0 / lo - 1.0 / hi));
        shift.push(T::c(1.0 / hi));
    }
    let s = tape.constant(Tensor::new(&[n, 1, 1, 1], scale)?);
    let b = tape.constant(Tensor::new(&[n, 1, 1, 1], shift)?);
    let inv = tape.mul(disp, s)?;
    let inv = tape.add(inv, b)?;
    Ok(tape.recip(inv))
}

/// Masked photometric plus scale-weighted smoothness, averaged over scales,
/// pixels and batch. Scale `i` (0-based, finest first) has smoothness weight
/// `λ / 2^i`.
pub fn depth_task_loss<T: Real>(tape: &mut Tape<T>, inp: &DepthLossInputs<'_>, cfg: &LossConfig) -> Result<DepthLoss> {
    let ns = inp.sources.len();
    if ns == 0 || inp.axis_angles.len() != ns || inp.translations.len() != ns {
        return Err(Error::invalid("depth_task_loss", "sources and poses must be non-empty and aligned"));
    }
    if inp.disps.is_empty() {
        return Err(Error::invalid("depth_task_loss", "no disparity predictions"));
    }
    let identity = identity_error(tape, inp.target, inp.sources, cfg)?;
    let scales = inp.disps.len();
    let mut total: Option<Var> = None;
    let mut warped = Vec::with_capacity(scales);
    let mut mask_keep = Vec::with_capacity(scales);
    for (i, &disp) in inp.disps.iter().enumerate() {
        let depth = disp_to_depth_batch(tape, disp, inp.depth_bounds)?;
        let mut w_i = Vec::with_capacity(ns);
        for j in 0..ns {
            let w = tape.view_synthesis(inp.sources[j], depth, inp.axis_angles[j], inp.translations[j], inp.intrinsics)?;
            w_i.push(w);
        }
        let photo = masked_min_with_identity(tape, inp.target, &w_i, &identity, cfg)?;
        mask_keep.push(photo.mask.data().iter().sum::<f64>() / photo.mask.numel() as f64);
        let mut term = tape.mean(photo.loss);
        if cfg.smoothness > 0.0 {
            let smooth = tape.smoothness_map(disp, inp.target)?;
            let smooth = tape.mean(smooth);
            let smooth = tape.scale(smooth, cfg.smoothness / (1u64 << i) as f64);
            term = tape.add(term, smooth)?;
        }
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
        warped.push(w_i);
    }
    let loss = tape.scale(total.expect("at least one scale"), 1.0 / scales as f64);
    Ok(DepthLoss {
        loss,
        warped,
        mask_keep,
    })
}
