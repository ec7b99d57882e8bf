//! Desk-scale depth and ego-motion networks.
//!
//! The depth network is a three-level strided encoder with a skip-connected
//! decoder emitting a sigmoid disparity at 1/8, 1/4, 1/2 and full resolution.
//! The ego-motion network regresses a 6-DoF pose (and optionally intrinsics)
//! from a source/target pair concatenated along channels.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::NUM_SCALES;
use crate::real::Real;
use crate::tensor::{ParamSet, Tape, Tensor, Var};

/// Output scaling of the pose head.
pub const POSE_SCALE: f64 = 0.01;

const INPUT_MEAN: f64 = 0.45;
const INPUT_STD: f64 = 0.225;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub height: usize,
    pub width: usize,
    pub base_width: usize,
    pub learn_intrinsics: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 96,
            base_width: 12,
            learn_intrinsics: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::Config(format!(
                "input size {}x{} must be a positive multiple of 8",
                self.height, self.width
            )));
        }
        if self.base_width < 4 {
            return Err(Error::Config(format!("base width {} < 4", self.base_width)));
        }
        Ok(())
    }

    fn pose_outputs(&self) -> usize {
        if self.learn_intrinsics {
            10
        } else {
            6
        }
    }
}

/// (name, in channels, out channels, kernel) of every convolution, in the
/// order the forward passes consume them.
fn depth_layers(b: usize) -> Vec<(&'static str, usize, usize, usize)> {
    alloc::vec![
        ("enc1", 3, b, 3),
        ("enc2", b, 2 * b, 3),
        ("enc3", 2 * b, 4 * b, 3),
        ("dec3", 4 * b, 4 * b, 3),
        ("disp3", 4 * b, 1, 3),
        ("dec2", 6 * b, 2 * b, 3),
        ("disp2", 2 * b, 1, 3),
        ("dec1", 3 * b, b, 3),
        ("disp1", b, 1, 3),
        ("dec0", b + 3, b, 3),
        ("disp0", b, 1, 3),
    ]
}

fn pose_layers(b: usize, out: usize) -> Vec<(&'static str, usize, usize, usize)> {
    alloc::vec![
        ("conv1", 6, b, 3),
        ("conv2", b, 2 * b, 3),
        ("conv3", 2 * b, 4 * b, 3),
        ("conv4", 4 * b, 4 * b, 3),
        ("head", 4 * b, out, 1),
    ]
}

/// Parameters of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub depth: ParamSet<T>,
    pub pose: ParamSet<T>,
}

fn push_layers<T: Real, R: Rng + ?Sized>(
    set: &mut ParamSet<T>,
    prefix: &str,
    layers: &[(&'static str, usize, usize, usize)],
    rng: &mut R,
) {
    for &(name, cin, cout, k) in layers {
        let fan_in = (cin * k * k) as f64;
        let bound = num_traits::Float::sqrt(6.0 / fan_in);
        let w = Tensor::from_fn(&[cout, cin, k, k], |_| T::c(rng.random_range(-bound..bound)));
        set.push(format!("{prefix}.{name}.weight"), w);
        set.push(format!("{prefix}.{name}.bias"), Tensor::zeros(&[cout]));
    }
}

impl<T: Real> ModelParams<T> {
    /// He-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut depth = ParamSet::new();
        push_layers(&mut depth, "depth", &depth_layers(cfg.base_width), rng);
        let mut pose = ParamSet::new();
        push_layers(&mut pose, "pose", &pose_layers(cfg.base_width, cfg.pose_outputs()), rng);
        Ok(Self { depth, pose })
    }

    pub fn numel(&self) -> usize {
        self.depth.numel() + self.pose.numel()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.depth.same_layout(&other.depth) && self.pose.same_layout(&other.pose)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            depth: self.depth.cast(),
            pose: self.pose.cast(),
        }
    }

    /// Checks the parameter layout against a configuration.
    pub fn check_layout(&self, cfg: &NetworkConfig) -> Result<()> {
        let expect = Self::init(cfg, &mut crate::rng::stream(0, crate::rng::Stream::Init))?;
        if !self.same_layout(&expect) {
            return Err(Error::Config(String::from(
                "parameter shapes do not match the network configuration",
            )));
        }
        Ok(())
    }

    /// Registers every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        let mut leaf = |t: &Tensor<T>| tape.leaf(t.clone(), requires_grad);
        Bound {
            depth: self.depth.tensors().iter().map(&mut leaf).collect(),
            pose: self.pose.tensors().iter().map(&mut leaf).collect(),
        }
    }
}

/// Parameters of a [`ModelParams`] as tape variables, in the same order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub depth: Vec<Var>,
    pub pose: Vec<Var>,
}

struct Layers<'a> {
    vars: core::slice::Iter<'a, Var>,
}

impl Layers<'_> {
    fn conv<T: Real>(&mut self, tape: &mut Tape<T>, x: Var, stride: usize) -> Result<Var> {
        let (w, b) = match (self.vars.next(), self.vars.next()) {
            (Some(&w), Some(&b)) => (w, b),
            _ => return Err(Error::invalid("network", "parameter list too short")),
        };
        let k = tape.shape(w)[2];
        tape.conv2d(x, w, Some(b), stride, k / 2)
    }
}

fn check_image<T: Real>(tape: &Tape<T>, cfg: &NetworkConfig, x: Var, channels: usize) -> Result<usize> {
    let s = tape.shape(x);
    if s.len() != 4 || s[1] != channels || s[2] != cfg.height || s[3] != cfg.width {
        return Err(Error::shape(
            "network input",
            s,
            &[s.first().copied().unwrap_or(0), channels, cfg.height, cfg.width],
        ));
    }
    Ok(s[0])
}

/// Predicts four sigmoid disparity maps for a `[n, 3, H, W]` batch, each
/// upsampled to `[n, 1, H, W]`, finest first.
pub fn depth_forward<T: Real>(
    tape: &mut Tape<T>,
    cfg: &NetworkConfig,
    params: &Bound,
    image: Var,
) -> Result<Vec<Var>> {
    check_image(tape, cfg, image, 3)?;
    let (h, w) = (cfg.height, cfg.width);
    let mut l = Layers {
        vars: params.depth.iter(),
    };
    let x = tape.affine(image, 1.0 / INPUT_STD, -INPUT_MEAN / INPUT_STD);
    let c = l.conv(tape, x, 2)?;
    let e1 = tape.elu(c);
    let c = l.conv(tape, e1, 2)?;
    let e2 = tape.elu(c);
    let c = l.conv(tape, e2, 2)?;
    let e3 = tape.elu(c);

    let c = l.conv(tape, e3, 1)?;
    let d3 = tape.elu(c);
    let c = l.conv(tape, d3, 1)?;
    let disp3 = tape.sigmoid(c);

    let decode = |tape: &mut Tape<T>, l: &mut Layers<'_>, prev: Var, skip: Var, scale: usize| -> Result<(Var, Var)> {
        let up = tape.bilinear_resize(prev, h / scale, w / scale)?;
        let cat = tape.concat(&[up, skip], 1)?;
        let c = l.conv(tape, cat, 1)?;
        let d = tape.elu(c);
        let c = l.conv(tape, d, 1)?;
        Ok((d, tape.sigmoid(c)))
    };
    let (d2, disp2) = decode(tape, &mut l, d3, e2, 4)?;
    let (d1, disp1) = decode(tape, &mut l, d2, e1, 2)?;
    let (_, disp0) = decode(tape, &mut l, d1, x, 1)?;

    let mut out = Vec::with_capacity(NUM_SCALES);
    out.push(disp0);
    for d in [disp1, disp2, disp3] {
        out.push(tape.bilinear_resize(d, h, w)?);
    }
    Ok(out)
}

/// Ego-motion prediction for a batch of source/target pairs.
#[derive(Debug, Clone, Copy)]
pub struct PoseOutput {
    /// `[n, 3]` axis-angle of the target→source motion.
    pub axis_angle: Var,
    /// `[n, 3]` translation of the target→source motion.
    pub translation: Var,
    /// `[n, 4]` intrinsics rows when learned.
    pub intrinsics: Option<Var>,
}

pub fn pose_forward<T: Real>(
    tape: &mut Tape<T>,
    cfg: &NetworkConfig,
    params: &Bound,
    source: Var,
    target: Var,
) -> Result<PoseOutput> {
    if tape.shape(source) != tape.shape(target) {
        return Err(Error::shape("pose_forward", tape.shape(source), tape.shape(target)));
    }
    let n = check_image(tape, cfg, source, 3)?;
    let mut l = Layers {
        vars: params.pose.iter(),
    };
    let pair = tape.concat(&[source, target], 1)?;
    let mut x = tape.affine(pair, 1.0 / INPUT_STD, -INPUT_MEAN / INPUT_STD);
    for _ in 0..4 {
        let c = l.conv(tape, x, 2)?;
        x = tape.elu(c);
    }
    let head = l.conv(tape, x, 1)?;
    let s = tape.shape(head).to_vec();
    let flat = tape.reshape(head, &[n, s[1], s[2] * s[3]])?;
    let raw = tape.mean_axis(flat, 2)?;
    pose_from_head(tape, cfg, raw)
}

/// Splits raw head outputs `[n, 6]` (or `[n, 10]`) into scaled pose and
/// intrinsics.
pub fn pose_from_head<T: Real>(tape: &mut Tape<T>, cfg: &NetworkConfig, raw: Var) -> Result<PoseOutput> {
    let s = tape.shape(raw).to_vec();
    if s.len() != 2 || s[1] != cfg.pose_outputs() {
        return Err(Error::shape("pose head", &s, &[s.first().copied().unwrap_or(0), cfg.pose_outputs()]));
    }
    let aa = tape.narrow(raw, 1, 0, 3)?;
    let tr = tape.narrow(raw, 1, 3, 3)?;
    let intrinsics = if cfg.learn_intrinsics {
        let head = tape.narrow(raw, 1, 6, 4)?;
        Some(intrinsics_forward(tape, cfg, head)?)
    } else {
        None
    };
    Ok(PoseOutput {
        axis_angle: tape.scale(aa, POSE_SCALE),
        translation: tape.scale(tr, POSE_SCALE),
        intrinsics,
    })
}

/// Maps raw head outputs `(a, b, c, d)` to `(W·softplus a, H·softplus b,
/// W·sigmoid c, H·sigmoid d)`.
pub fn intrinsics_forward<T: Real>(tape: &mut Tape<T>, cfg: &NetworkConfig, head: Var) -> Result<Var> {
    if !cfg.learn_intrinsics {
        return Err(Error::invalid("intrinsics_forward", "learned intrinsics are disabled"));
    }
    let s = tape.shape(head).to_vec();
    if s.len() != 2 || s[1] != 4 {
        return Err(Error::shape("intrinsics_forward", &s, &[s.first().copied().unwrap_or(0), 4]));
    }
    let size = tape.constant(Tensor::new(&[1, 2], alloc::vec![T::c(cfg.width as f64), T::c(cfg.height as f64)])?);
    let focal = tape.narrow(head, 1, 0, 2)?;
    let focal = tape.softplus(focal);
    let focal = tape.mul(focal, size)?;
    let centre = tape.narrow(head, 1, 2, 2)?;
    let centre = tape.sigmoid(centre);
    let centre = tape.mul(centre, size)?;
    tape.concat(&[focal, centre], 1)
}
