//! Procedural multi-task video generator with exact depth and ego-motion.
//!
//! A scene is a stack of fronto-parallel textured rectangles in front of an
//! infinite background plane at the far depth. Cameras look down +z; each
//! pixel ray hits the nearest plane, so depth and occlusion are analytic and
//! warping one frame into another with the true depth and pose reproduces it
//! wherever the same surface is visible.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{axis_angle_to_rotation, mat_vec, CameraIntrinsics, Mat3, Pose};
use crate::rng::{indexed, Stream};
use crate::tensor::Tensor;

const WAVES: usize = 4;
const WAVE_AMPLITUDE: f64 = 0.11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub d_min: f64,
    pub d_max: f64,
    /// Number of planes including the background.
    pub planes: usize,
    /// Texture frequency range in cycles per pixel as seen from the target view.
    pub texture_band: [f64; 2],
    pub brightness: f64,
    pub intrinsics: CameraIntrinsics,
    /// Per-axis standard deviation of each camera step.
    pub translation_std: f64,
    /// Per-axis standard deviation of each camera rotation, radians.
    pub rotation_std: f64,
    /// Tint of the nearest and farthest surfaces; intermediate depths blend
    /// in log-depth.
    pub near_tint: [f64; 3],
    pub far_tint: [f64; 3],
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scene `{}`: {m}", self.name)));
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return bad(format!("depth range [{}, {}]", self.d_min, self.d_max));
        }
        if self.planes == 0 {
            return bad(String::from("plane count must be at least 1"));
        }
        if self.height == 0 || self.width == 0 {
            return bad(String::from("empty image size"));
        }
        let [lo, hi] = self.texture_band;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return bad(format!("texture band [{lo}, {hi}] must lie in (0, 0.5]"));
        }
        if !(self.brightness > 0.0 && self.brightness.is_finite()) {
            return bad(format!("brightness {}", self.brightness));
        }
        if !(self.translation_std >= 0.0 && self.rotation_std >= 0.0) {
            return bad(String::from("negative motion magnitude"));
        }
        let tint_ok = |t: &[f64; 3]| t.iter().all(|c| (0.0..=1.0).contains(c));
        if !tint_ok(&self.near_tint) || !tint_ok(&self.far_tint) {
            return bad(String::from("tints must lie in [0, 1]"));
        }
        self.intrinsics.validate()
    }

    fn tint(&self, z: f64) -> [f64; 3] {
        let u = ((z / self.d_min).ln() / (self.d_max / self.d_min).ln()).clamp(0.0, 1.0);
        let mut t = [0.0; 3];
        for (c, v) in t.iter_mut().enumerate() {
            *v = self.near_tint[c] + u * (self.far_tint[c] - self.near_tint[c]);
        }
        t
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
}

#[derive(Debug, Clone)]
struct Plane {
    z: f64,
    /// World-space extent `[x0, x1, y0, y1]`; `None` for the background.
    extent: Option<[f64; 4]>,
    waves: [Wave; WAVES],
    tint: [f64; 3],
}

impl Plane {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self.extent {
            None => true,
            Some([x0, x1, y0, y1]) => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }

    fn texture(&self, x: f64, y: f64) -> f64 {
        let tau = core::f64::consts::TAU;
        0.5 + self
            .waves
            .iter()
            .map(|w| WAVE_AMPLITUDE * (tau * (w.kx * x + w.ky * y) + w.phase).sin())
            .sum::<f64>()
    }
}

/// One sampled scene: the planes of a spec drawn from a seeded stream.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    planes: Vec<Plane>,
}

impl Scene {
    pub fn sample<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let k = spec.intrinsics;
        let (w, h) = (spec.width as f64, spec.height as f64);
        let waves = |rng: &mut R, z: f64| {
            let mut out = [Wave { kx: 0.0, ky: 0.0, phase: 0.0 }; WAVES];
            for wave in &mut out {
                let f = rng.random_range(spec.texture_band[0]..=spec.texture_band[1]);
                let angle = rng.random_range(0.0..core::f64::consts::PI);
                // Cycles per pixel at depth z → cycles per world unit.
                wave.kx = f * angle.cos() * k.fx / z;
                wave.ky = f * angle.sin() * k.fy / z;
                wave.phase = rng.random_range(0.0..core::f64::consts::TAU);
            }
            out
        };
        let mut planes = Vec::with_capacity(spec.planes);
        let (lo, hi) = (spec.d_min.ln(), spec.d_max.ln());
        for _ in 1..spec.planes {
            let z = rng.random_range(lo..hi).exp().clamp(spec.d_min, spec.d_max);
            let fw = rng.random_range(0.2..0.6);
            let fh = rng.random_range(0.2..0.6);
            let u0 = rng.random_range(-0.1..(1.1 - fw)) * w;
            let v0 = rng.random_range(-0.1..(1.1 - fh)) * h;
            let to_x = |u: f64| (u - k.cx) * z / k.fx;
            let to_y = |v: f64| (v - k.cy) * z / k.fy;
            let extent = Some([to_x(u0), to_x(u0 + fw * w), to_y(v0), to_y(v0 + fh * h)]);
            planes.push(Plane {
                z,
                extent,
                waves: waves(rng, z),
                tint: spec.tint(z),
            });
        }
        planes.push(Plane {
            z: spec.d_max,
            extent: None,
            waves: waves(rng, spec.d_max),
            tint: spec.tint(spec.d_max),
        });
        Ok(Self {
            spec: spec.clone(),
            planes,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    /// Renders the view of a camera whose world→camera motion is `camera`.
    /// Returns a `[3, H, W]` image in `[0, 1]` and the `[H, W]` depth.
    pub fn render(&self, camera: &Pose) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let s = &self.spec;
        let (h, w) = (s.height, s.width);
        let r = camera.rotation();
        let rt = transpose(&r);
        // Camera centre in world coordinates: -Rᵀ T.
        let t = camera.translation;
        let c = mat_vec(&rt, [-t[0], -t[1], -t[2]]);
        let k = s.intrinsics;
        let mut image = vec![0.0f32; 3 * h * w];
        let mut depth = vec![0.0f32; h * w];
        for v in 0..h {
            for u in 0..w {
                let ray_c = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
                let ray = mat_vec(&rt, ray_c);
                let mut best: Option<(f64, &Plane, f64, f64)> = None;
                for p in &self.planes {
                    if ray[2] <= 0.0 {
                        break;
                    }
                    let lambda = (p.z - c[2]) / ray[2];
                    if lambda <= 0.0 {
                        continue;
                    }
                    let x = c[0] + lambda * ray[0];
                    let y = c[1] + lambda * ray[1];
                    if p.contains(x, y) && best.is_none_or(|b| lambda < b.0) {
                        best = Some((lambda, p, x, y));
                    }
                }
                let Some((lambda, p, x, y)) = best else {
                    return Err(Error::Scene(format!("camera sees no plane at pixel ({u}, {v})")));
                };
                let i = v * w + u;
                // ray_c has unit z, so the camera-frame depth is lambda.
                depth[i] = lambda as f32;
                let tex = 0.25 + 0.75 * p.texture(x, y);
                for ch in 0..3 {
                    image[ch * h * w + i] = (s.brightness * p.tint[ch] * tex).clamp(0.0, 1.0) as f32;
                }
            }
        }
        Ok((Tensor::new(&[3, h, w], image)?, Tensor::new(&[h, w], depth)?))
    }
}

fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            t[j][i] = v;
        }
    }
    t
}

/// Renders a single frame of a freshly sampled scene.
pub fn render_frame(spec: &SceneSpec, camera: &Pose) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let scene = Scene::sample(spec, &mut indexed(spec.seed, Stream::Scene, 0))?;
    scene.render(camera)
}

/// A target frame with its two temporal neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    /// Frames t−1, t, t+1, each `[3, H, W]`.
    pub frames: [Tensor<f32>; 3],
    /// `[H, W]` depth of frame t.
    pub depth: Tensor<f32>,
    /// Motions t→t−1 and t→t+1 (`X_s = R X_t + T`).
    pub poses: [Pose; 2],
    pub intrinsics: CameraIntrinsics,
}

impl Triplet {
    pub fn target(&self) -> &Tensor<f32> {
        &self.frames[1]
    }

    pub fn sources(&self) -> [&Tensor<f32>; 2] {
        [&self.frames[0], &self.frames[2]]
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Draws one camera step as a pose; values are rounded to binary32 so a
/// stored dataset reproduces them exactly.
fn camera_step<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<Pose> {
    let normal = |s: f64| Normal::new(0.0, s).map_err(|e| Error::Config(format!("{e}")));
    let nt = normal(spec.translation_std)?;
    let nr = normal(spec.rotation_std)?;
    let centre: [f64; 3] = core::array::from_fn(|_| nt.sample(rng));
    let aa: [f64; 3] = core::array::from_fn(|_| round_f32(nr.sample(rng)));
    let r = axis_angle_to_rotation(aa);
    let rc = mat_vec(&r, centre);
    Ok(Pose::new(aa, [round_f32(-rc[0]), round_f32(-rc[1]), round_f32(-rc[2])]))
}

/// The scene and the t→t−1, t→t+1 camera motions of sample `index`. The
/// target camera is the world frame; neighbours are independent random steps.
pub fn sample_scene(spec: &SceneSpec, index: u64) -> Result<(Scene, [Pose; 2])> {
    let mut rng = indexed(spec.seed, Stream::Scene, index);
    let scene = Scene::sample(spec, &mut rng)?;
    let prev = camera_step(spec, &mut rng)?;
    let next = camera_step(spec, &mut rng)?;
    Ok((scene, [prev, next]))
}

/// Renders sample `index` of a task.
pub fn generate_sample(spec: &SceneSpec, index: u64) -> Result<Triplet> {
    let (scene, [prev, next]) = sample_scene(spec, index)?;
    let (f0, _) = scene.render(&prev)?;
    let (f1, depth) = scene.render(&Pose::identity())?;
    let (f2, _) = scene.render(&next)?;
    Ok(Triplet {
        frames: [f0, f1, f2],
        depth,
        poses: [prev, next],
        intrinsics: spec.intrinsics,
    })
}

/// Samples `first..first + n` of a task.
pub fn generate_task(spec: &SceneSpec, first: u64, n: usize) -> Result<Vec<Triplet>> {
    if n == 0 {
        return Err(Error::Config(String::from("a task needs at least one sample")));
    }
    (first..first + n as u64).map(|i| generate_sample(spec, i)).collect()
}

/// Sample index offset of the held-out split.
pub const TEST_OFFSET: u64 = 1 << 32;

/// The four-task suite: two outdoor-like long-range tasks, a mid-range task
/// and a short-range indoor-like task, each with its own colour-to-depth
/// association, texture scale, brightness and camera.
pub fn default_suite(height: usize, width: usize, seed: u64) -> Vec<SceneSpec> {
    let (w, h) = (width as f64, height as f64);
    let k = |f: f64, dx: f64, dy: f64| CameraIntrinsics {
        fx: f * w,
        fy: f * w,
        cx: 0.5 * w + dx,
        cy: 0.5 * h + dy,
    };
    let task = |i: u64, name: &str, d: (f64, f64), band: [f64; 2], gain: f64, kk, near, far, step: f64| SceneSpec {
        name: String::from(name),
        height,
        width,
        d_min: d.0,
        d_max: d.1,
        planes: 5,
        texture_band: band,
        brightness: gain,
        intrinsics: kk,
        translation_std: step,
        rotation_std: 0.01,
        near_tint: near,
        far_tint: far,
        seed: seed.wrapping_mul(1_000_003).wrapping_add(i),
    };
    vec![
        task(1, "task1", (2.0, 20.0), [0.03, 0.08], 1.0, k(0.62, 0.0, 0.0), [1.0, 0.45, 0.25], [0.25, 0.5, 1.0], 0.12),
        task(2, "task2", (2.0, 80.0), [0.06, 0.12], 0.85, k(0.75, 0.5, -0.5), [0.35, 1.0, 0.35], [1.0, 0.35, 0.9], 0.15),
        task(3, "task3", (0.5, 10.0), [0.02, 0.05], 0.7, k(0.52, -0.5, 0.5), [0.25, 0.5, 1.0], [1.0, 0.45, 0.25], 0.03),
        task(4, "task4", (2.0, 80.0), [0.08, 0.14], 1.1, k(0.68, 0.0, 0.5), [1.0, 0.35, 0.9], [0.35, 1.0, 0.35], 0.15),
    ]
}
