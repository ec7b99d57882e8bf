//! Spatiotemporal consistency between the working and context models'
//! synthesized targets, averaged over random crops.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::real::Real;
use crate::tensor::{Tape, Var};

pub const MIN_CROP_RATIO: f64 = 0.1;
pub const MAX_CROP_RATIO: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropConfig {
    pub random_crop: bool,
    pub mean: f64,
    pub std: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            random_crop: true,
            mean: 0.5,
            std: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crop {
    pub ratio: f64,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Clips a drawn ratio and places a `⌊rH⌋×⌊rW⌋` window (at least one pixel)
/// at a uniform in-bounds corner.
pub fn place_crop<R: Rng + ?Sized>(ratio: f64, h: usize, w: usize, rng: &mut R) -> Crop {
    let ratio = ratio.clamp(MIN_CROP_RATIO, MAX_CROP_RATIO);
    let ch = ((ratio * h as f64).floor() as usize).clamp(1, h);
    let cw = ((ratio * w as f64).floor() as usize).clamp(1, w);
    Crop {
        ratio,
        top: rng.random_range(0..=h - ch),
        left: rng.random_range(0..=w - cw),
        height: ch,
        width: cw,
    }
}

pub fn sample_crop<R: Rng + ?Sized>(cfg: &CropConfig, h: usize, w: usize, rng: &mut R) -> Result<Crop> {
    let dist = Normal::new(cfg.mean, cfg.std).map_err(|e| Error::Config(alloc::format!("crop ratio: {e}")))?;
    Ok(place_crop(dist.sample(rng), h, w, rng))
}

impl<T: Real> Tape<T> {
    /// Per-pixel photometric discrepancy between a context-model synthesis
    /// (detached) and a working-model synthesis.
    pub fn stc_map(&mut self, context: Var, working: Var, cfg: &LossConfig) -> Result<Var> {
        let context = self.detach(context);
        self.photometric_map(context, working, cfg)
    }
}

/// Consistency loss over `[scale][source]` syntheses of the memory batch.
/// Each (source, scale) pair draws its own crop, shared across the batch.
pub fn stc_loss<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    context: &[Vec<Var>],
    working: &[Vec<Var>],
    loss_cfg: &LossConfig,
    crop_cfg: &CropConfig,
    rng: &mut R,
) -> Result<Var> {
    if context.len() != working.len() || context.is_empty() {
        return Err(Error::invalid("stc_loss", "scale lists differ or are empty"));
    }
    let ns = context[0].len();
    if ns == 0 || context.iter().chain(working).any(|s| s.len() != ns) {
        return Err(Error::invalid("stc_loss", "source lists differ or are empty"));
    }
    let mut maps = Vec::with_capacity(context.len() * ns);
    for (c, w) in context.iter().zip(working) {
        for j in 0..ns {
            maps.push(tape.stc_map(c[j], w[j], loss_cfg)?);
        }
    }
    let mut total: Option<Var> = None;
    let scales = context.len();
    for j in 0..ns {
        for i in 0..scales {
            let map = maps[i * ns + j];
            let s = tape.shape(map).to_vec();
            let (h, w) = (s[2], s[3]);
            let region = if crop_cfg.random_crop {
                let c = sample_crop(crop_cfg, h, w, rng)?;
                let r = tape.narrow(map, 2, c.top, c.height)?;
                tape.narrow(r, 3, c.left, c.width)?
            } else {
                map
            };
            let term = tape.mean(region);
            total = Some(match total {
                None => term,
                Some(t) => tape.add(t, term)?,
            });
        }
    }
    let total = total.expect("non-empty");
    Ok(tape.scale(total, 1.0 / (scales * ns) as f64))
}
