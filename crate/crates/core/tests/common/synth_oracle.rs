//! Ground-truth warping oracle: synthesizing the target frame from each source
//! with the generator's own depth, pose and intrinsics must reproduce it
//! wherever the same surface is visible in both views.

use depthcl_core::geometry::CameraIntrinsics;
use depthcl_core::synth::{sample_scene, SceneSpec};
use depthcl_core::{Result, Tape, Tensor};

/// Relative depth agreement that marks a source pixel as the same surface.
const SAME_SURFACE: f64 = 1e-3;

#[derive(Debug, Default, Clone, Copy)]
pub struct OracleStats {
    pub checked: usize,
    pub above_30db: usize,
}

impl OracleStats {
    pub fn fraction(&self) -> f64 {
        self.above_30db as f64 / self.checked.max(1) as f64
    }
}

/// Warps both sources of samples `0..n` into the target with ground truth and
/// counts non-occluded, in-view pixels whose per-pixel PSNR exceeds 30 dB.
pub fn gt_warp_psnr(spec: &SceneSpec, n: usize) -> Result<OracleStats> {
    let (h, w) = (spec.height, spec.width);
    let k: CameraIntrinsics = spec.intrinsics;
    let mut stats = OracleStats::default();
    for index in 0..n as u64 {
        let (scene, poses) = sample_scene(spec, index)?;
        let (target, depth) = scene.render(&Default::default())?;
        for pose in &poses {
            let (source, source_depth) = scene.render(pose)?;
            let mut tape = Tape::<f64>::new();
            let src = tape.constant(source.cast::<f64>().reshape(&[1, 3, h, w])?);
            let d = tape.constant(depth.cast::<f64>().reshape(&[1, 1, h, w])?);
            let p = pose.to_array();
            let aa = tape.constant(Tensor::from_slice(&[1, 3], &p[..3])?);
            let tr = tape.constant(Tensor::from_slice(&[1, 3], &p[3..])?);
            let kk = tape.constant(CameraIntrinsics::batch_tensor(&[k])?);
            let warped = tape.view_synthesis(src, d, aa, tr, kk)?;
            let warped = tape.value(warped).data().to_vec();

            for v in 0..h {
                for u in 0..w {
                    let z = depth.data()[v * w + u] as f64;
                    let x_t = [(u as f64 - k.cx) / k.fx * z, (v as f64 - k.cy) / k.fy * z, z];
                    let x_s = pose.apply(x_t);
                    if x_s[2] <= 0.0 {
                        continue;
                    }
                    let us = k.fx * x_s[0] / x_s[2] + k.cx;
                    let vs = k.fy * x_s[1] / x_s[2] + k.cy;
                    if !(us >= 0.0 && vs >= 0.0 && us <= (w - 1) as f64 && vs <= (h - 1) as f64) {
                        continue;
                    }
                    let (u0, v0) = (us.floor() as usize, vs.floor() as usize);
                    let (u1, v1) = ((u0 + 1).min(w - 1), (v0 + 1).min(h - 1));
                    let visible = [(u0, v0), (u1, v0), (u0, v1), (u1, v1)].iter().all(|&(a, b)| {
                        let ds = source_depth.data()[b * w + a] as f64;
                        (ds - x_s[2]).abs() <= SAME_SURFACE * x_s[2]
                    });
                    if !visible {
                        continue;
                    }
                    let mse = (0..3)
                        .map(|c| {
                            let i = c * h * w + v * w + u;
                            let e = warped[i] - target.data()[i] as f64;
                            e * e
                        })
                        .sum::<f64>()
                        / 3.0;
                    stats.checked += 1;
                    if mse < 1e-3 {
                        stats.above_30db += 1;
                    }
                }
            }
        }
    }
    Ok(stats)
}
