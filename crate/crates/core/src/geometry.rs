//! Pinhole camera, axis-angle poses and differentiable view synthesis.
//!
//! A target pixel `p_t` with depth `D` back-projects to `D K⁻¹ p_t`, moves to
//! the source camera by `X_s = R X_t + T` and projects with `K`. Sampling the
//! source image at the resulting coordinates synthesizes the target view.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Backward, BackwardCtx, Tape, Tensor, Var};
#[allow(unused_imports)]
use num_traits::Float;

/// Homogeneous depth floor applied before perspective division.
pub const MIN_PROJECTED_Z: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-6;
const SERIES_ANGLE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(alloc::format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.fx, self.fy, self.cx, self.cy]
    }

    /// `[n, 4]` tensor of `(fx, fy, cx, cy)` rows, one per batch element.
    pub fn batch_tensor<T: Real>(ks: &[CameraIntrinsics]) -> Result<Tensor<T>> {
        let data = ks.iter().flat_map(|k| k.to_array()).map(T::c).collect();
        Tensor::new(&[ks.len(), 4], data)
    }
}

/// Rigid motion taking target-camera coordinates to source-camera
/// coordinates: `X_s = R(axis_angle) X_t + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub axis_angle: [f64; 3],
    pub translation: [f64; 3],
}

pub type Mat3 = [[f64; 3]; 3];

impl Pose {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(axis_angle: [f64; 3], translation: [f64; 3]) -> Self {
        Self {
            axis_angle,
            translation,
        }
    }

    pub fn rotation(&self) -> Mat3 {
        axis_angle_to_rotation(self.axis_angle)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let q = mat_vec(&r, p);
        [
            q[0] + self.translation[0],
            q[1] + self.translation[1],
            q[2] + self.translation[2],
        ]
    }

    pub fn inverse(&self) -> Self {
        let neg = [-self.axis_angle[0], -self.axis_angle[1], -self.axis_angle[2]];
        let rt = axis_angle_to_rotation(neg);
        let t = mat_vec(&rt, self.translation);
        Self {
            axis_angle: neg,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        let r = mat_mul(&self.rotation(), &other.rotation());
        let t = mat_vec(&self.rotation(), other.translation);
        Self {
            axis_angle: rotation_to_axis_angle(&r),
            translation: [
                t[0] + self.translation[0],
                t[1] + self.translation[1],
                t[2] + self.translation[2],
            ],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (a, t) = (self.axis_angle, self.translation);
        [a[0], a[1], a[2], t[0], t[1], t[2]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

pub fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    core::array::from_fn(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    core::array::from_fn(|i| core::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

/// Coefficients `(A, B, C, D)` of `R = I + A K + B K²` and of the angle
/// derivatives `A'/θ`, `B'/θ`, all as functions of `θ = |v|`.
fn rodrigues_coeffs(theta: f64) -> (f64, f64, f64, f64) {
    use num_traits::Float;
    let t2 = theta * theta;
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let s = Float::sin(theta * 0.5);
        (Float::sin(theta) / theta, 2.0 * s * s / t2)
    };
    let (c, d) = if theta < SERIES_ANGLE {
        (
            -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        )
    } else {
        let (s, co) = (Float::sin(theta), Float::cos(theta));
        let h = Float::sin(theta * 0.5);
        (
            (theta * co - s) / (t2 * theta),
            (theta * s - 4.0 * h * h) / (t2 * t2),
        )
    };
    (a, b, c, d)
}

fn skew(v: [f64; 3]) -> Mat3 {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

/// Rodrigues' formula.
pub fn axis_angle_to_rotation(v: [f64; 3]) -> Mat3 {
    use num_traits::Float;
    let theta = Float::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    let (a, b, _, _) = rodrigues_coeffs(theta);
    let k = skew(v);
    let k2 = mat_mul(&k, &k);
    core::array::from_fn(|i| {
        core::array::from_fn(|j| if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j])
    })
}

/// Inverse of [`axis_angle_to_rotation`] for angles in `[0, π)`.
pub fn rotation_to_axis_angle(r: &Mat3) -> [f64; 3] {
    use num_traits::Float;
    let cos = ((r[0][0] + r[1][1] + r[2][2] - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = Float::acos(cos);
    let w = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    let s = if theta < SMALL_ANGLE {
        0.5 + theta * theta / 12.0
    } else {
        theta / (2.0 * Float::sin(theta))
    };
    [w[0] * s, w[1] * s, w[2] * s]
}

struct RodriguesOp {
    v: Var,
}

impl<T: Real> Backward<T> for RodriguesOp {
    fn name(&self) -> &'static str {
        "axis_angle_to_rotation"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, _out: Var, grad: &[T]) {
        let vals: Vec<f64> = ctx.value(self.v).data().iter().map(|x| x.f64()).collect();
        let Some(gv) = ctx.grad_mut(self.v) else {
            return;
        };
        let inner = |a: &Mat3, b: &[T]| -> f64 {
            (0..9).map(|k| a[k / 3][k % 3] * b[k].f64()).sum()
        };
        for n in 0..vals.len() / 3 {
            let v = [vals[3 * n], vals[3 * n + 1], vals[3 * n + 2]];
            let g = &grad[9 * n..9 * n + 9];
            let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let (a, b, c, d) = rodrigues_coeffs(theta);
            let k = skew(v);
            let k2 = mat_mul(&k, &k);
            let (gk, gk2) = (inner(&k, g), inner(&k2, g));
            for m in 0..3 {
                let mut e = [0.0; 3];
                e[m] = 1.0;
                let em = skew(e);
                let sym = inner(&mat_mul(&em, &k), g) + inner(&mat_mul(&k, &em), g);
                let dm = c * v[m] * gk + a * inner(&em, g) + d * v[m] * gk2 + b * sym;
                gv[3 * n + m] += T::c(dm);
            }
        }
    }
}

struct ProjectOp {
    depth: Var,
    rot: Var,
    trans: Var,
    k: Var,
}

impl<T: Real> Backward<T> for ProjectOp {
    fn name(&self) -> &'static str {
        "project_pixels"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_, T>, _out: Var, grad: &[T]) {
        let ds = ctx.value(self.depth).shape().to_vec();
        let (n, h, w) = (ds[0], ds[2], ds[3]);
        let depth = ctx.value(self.depth).data().to_vec();
        let rot = ctx.value(self.rot).data().to_vec();
        let trans = ctx.value(self.trans).data().to_vec();
        let kk = ctx.value(self.k).data().to_vec();
        let need_d = ctx.requires_grad(self.depth);
        let need_r = ctx.requires_grad(self.rot);
        let need_t = ctx.requires_grad(self.trans);
        let need_k = ctx.requires_grad(self.k);
        let mut gd = need_d.then(|| vec![T::zero(); depth.len()]);
        let mut gr = vec![T::zero(); rot.len()];
        let mut gt = vec![T::zero(); trans.len()];
        let mut gk = vec![T::zero(); kk.len()];
        let zmin = T::c(MIN_PROJECTED_Z);
        for b in 0..n {
            let r = &rot[9 * b..9 * b + 9];
            let t = &trans[3 * b..3 * b + 3];
            let (fx, fy, cx, cy) = (kk[4 * b], kk[4 * b + 1], kk[4 * b + 2], kk[4 * b + 3]);
            let (mut gr_b, mut gt_b) = ([T::zero(); 9], [T::zero(); 3]);
            let (mut gfx, mut gfy, mut gcx, mut gcy) = (T::zero(), T::zero(), T::zero(), T::zero());
            for y in 0..h {
                let ry = (T::c(y as f64) - cy) / fy;
                for x in 0..w {
                    let p = y * w + x;
                    let di = b * h * w + p;
                    let rx = (T::c(x as f64) - cx) / fx;
                    let d = depth[di];
                    let pt = [d * rx, d * ry, d];
                    let q: [T; 3] = core::array::from_fn(|i| {
                        r[3 * i] * pt[0] + r[3 * i + 1] * pt[1] + r[3 * i + 2] * pt[2] + t[i]
                    });
                    let clamped = q[2] < zmin;
                    let z = if clamped { zmin } else { q[2] };
                    let gi = di * 2;
                    let (gx, gy) = (grad[gi], grad[gi + 1]);
                    let dq = [
                        gx * fx / z,
                        gy * fy / z,
                        if clamped {
                            T::zero()
                        } else {
                            -(gx * fx * q[0] + gy * fy * q[1]) / (z * z)
                        },
                    ];
                    for i in 0..3 {
                        gt_b[i] += dq[i];
                        for j in 0..3 {
                            gr_b[3 * i + j] += dq[i] * pt[j];
                        }
                    }
                    let dp: [T; 3] = core::array::from_fn(|j| {
                        r[j] * dq[0] + r[3 + j] * dq[1] + r[6 + j] * dq[2]
                    });
                    if let Some(gd) = gd.as_mut() {
                        gd[di] += dp[0] * rx + dp[1] * ry + dp[2];
                    }
                    if need_k {
                        let (drx, dry) = (dp[0] * d, dp[1] * d);
                        gfx += gx * q[0] / z - drx * rx / fx;
                        gfy += gy * q[1] / z - dry * ry / fy;
                        gcx += gx - drx / fx;
                        gcy += gy - dry / fy;
                    }
                }
            }
            gr[9 * b..9 * b + 9].copy_from_slice(&gr_b);
            gt[3 * b..3 * b + 3].copy_from_slice(&gt_b);
            gk[4 * b..4 * b + 4].copy_from_slice(&[gfx, gfy, gcx, gcy]);
        }
        if let Some(gd) = gd {
            ctx.accumulate(self.depth, &gd);
        }
        if need_r {
            ctx.accumulate(self.rot, &gr);
        }
        if need_t {
            ctx.accumulate(self.trans, &gt);
        }
        if need_k {
            ctx.accumulate(self.k, &gk);
        }
    }
}

impl<T: Real> Tape<T> {
    /// `[n, 3]` axis-angle vectors to `[n, 3, 3]` rotation matrices.
    pub fn axis_angle_to_rotation(&mut self, v: Var) -> Result<Var> {
        let s = self.shape(v).to_vec();
        if s.len() != 2 || s[1] != 3 {
            return Err(Error::shape("axis_angle_to_rotation", &s, &[0, 3]));
        }
        let mut out = Vec::with_capacity(s[0] * 9);
        for row in self.value(v).data().chunks(3) {
            let r = axis_angle_to_rotation([row[0].f64(), row[1].f64(), row[2].f64()]);
            out.extend(r.iter().flatten().map(|&x| T::c(x)));
        }
        let value = Tensor::new(&[s[0], 3, 3], out)?;
        Ok(self.push(value, &[v], RodriguesOp { v }))
    }

    /// Source-image pixel coordinates `[n, h, w, 2]` for every target pixel,
    /// given target depth `[n, 1, h, w]`, rotation `[n, 3, 3]`, translation
    /// `[n, 3]` and intrinsics rows `[n, 4]`.
    pub fn project_pixels(&mut self, depth: Var, rot: Var, trans: Var, k: Var) -> Result<Var> {
        let ds = self.shape(depth).to_vec();
        if ds.len() != 4 || ds[1] != 1 {
            return Err(Error::shape("project_pixels", &ds, &[0, 1, 0, 0]));
        }
        let n = ds[0];
        if self.shape(rot) != [n, 3, 3] {
            return Err(Error::shape("project_pixels", &ds, self.shape(rot)));
        }
        if self.shape(trans) != [n, 3] {
            return Err(Error::shape("project_pixels", &ds, self.shape(trans)));
        }
        if self.shape(k) != [n, 4] {
            return Err(Error::shape("project_pixels", &ds, self.shape(k)));
        }
        let (h, w) = (ds[2], ds[3]);
        let depth_v = self.value(depth).data();
        if let Some(i) = depth_v.iter().position(|&d| !(d > T::zero())) {
            return Err(Error::NonPositiveDepth(i));
        }
        let rot_v = self.value(rot).data();
        let trans_v = self.value(trans).data();
        let kv = self.value(k).data();
        if kv.chunks(4).any(|r| !(r[0] > T::zero() && r[1] > T::zero())) {
            return Err(Error::invalid("project_pixels", "focal lengths must be positive"));
        }
        let zmin = T::c(MIN_PROJECTED_Z);
        let mut out = vec![T::zero(); n * h * w * 2];
        for b in 0..n {
            let r = &rot_v[9 * b..9 * b + 9];
            let t = &trans_v[3 * b..3 * b + 3];
            let (fx, fy, cx, cy) = (kv[4 * b], kv[4 * b + 1], kv[4 * b + 2], kv[4 * b + 3]);
            for y in 0..h {
                let ry = (T::c(y as f64) - cy) / fy;
                for x in 0..w {
                    let di = b * h * w + y * w + x;
                    let rx = (T::c(x as f64) - cx) / fx;
                    let d = depth_v[di];
                    let pt = [d * rx, d * ry, d];
                    let q: [T; 3] = core::array::from_fn(|i| {
                        r[3 * i] * pt[0] + r[3 * i + 1] * pt[1] + r[3 * i + 2] * pt[2] + t[i]
                    });
                    let z = q[2].max(zmin);
                    out[2 * di] = fx * q[0] / z + cx;
                    out[2 * di + 1] = fy * q[1] / z + cy;
                }
            }
        }
        let value = Tensor::new(&[n, h, w, 2], out)?;
        Ok(self.push(
            value,
            &[depth, rot, trans, k],
            ProjectOp {
                depth,
                rot,
                trans,
                k,
            },
        ))
    }

    /// Warps `source` `[n, c, h, w]` into the target view using target depth,
    /// the target→source pose (`axis_angle`, `translation`, each `[n, 3]`)
    /// and intrinsics `[n, 4]`.
    pub fn view_synthesis(
        &mut self,
        source: Var,
        depth: Var,
        axis_angle: Var,
        translation: Var,
        k: Var,
    ) -> Result<Var> {
        let rot = self.axis_angle_to_rotation(axis_angle)?;
        let grid = self.project_pixels(depth, rot, translation, k)?;
        let ss = self.shape(source).to_vec();
        let gs = self.shape(grid).to_vec();
        if ss.len() != 4 || ss[0] != gs[0] || ss[2] != gs[1] || ss[3] != gs[2] {
            return Err(Error::shape("view_synthesis", &ss, &gs));
        }
        self.grid_sample(source, grid)
    }

    /// Maps sigmoid disparity to depth through an affine inverse:
    /// `1/D = 1/max + (1/min - 1/max) σ`.
    pub fn disp_to_depth(&mut self, disp: Var, min_depth: f64, max_depth: f64) -> Result<Var> {
        if !(min_depth > 0.0 && min_depth < max_depth) {
            return Err(Error::Config(alloc::format!(
                "depth bounds must satisfy 0 < min < max, got [{min_depth}, {max_depth}]"
            )));
        }
        let (lo, hi) = (1.0 / max_depth, 1.0 / min_depth);
        let inv = self.affine(disp, hi - lo, lo);
        Ok(self.recip(inv))
    }
}

/// Per-pixel depth from sigmoid disparity, outside the tape.
pub fn disp_to_depth_value(sigma: f64, min_depth: f64, max_depth: f64) -> f64 {
    let (lo, hi) = (1.0 / max_depth, 1.0 / min_depth);
    1.0 / (lo + (hi - lo) * sigma)
}
