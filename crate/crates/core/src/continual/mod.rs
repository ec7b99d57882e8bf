//! Continual training: reservoir replay, EMA context model, spatiotemporal
//! consistency, and the per-method training step.

pub mod buffer;
pub mod ema;
pub mod stc;
mod trainer;

use alloc::string::String;
use alloc::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Triplet;

pub use buffer::ReplayBuffer;
pub use ema::DualModel;
pub use stc::{sample_crop, stc_loss, Crop, CropConfig};
pub use trainer::{predict_depth, Batch, StepLosses, Trainer, TrainerConfig, MIN_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Sequential fine-tuning without mitigation.
    #[serde(rename = "NCT")]
    Nct,
    /// Rehearsal of memory samples with the depth loss.
    #[serde(rename = "ER")]
    Er,
    /// Rehearsal plus EMA context model, evaluated at the context model.
    ContextDepth,
    /// Rehearsal, EMA context model and spatiotemporal consistency.
    #[serde(rename = "MonoDepthCL")]
    MonoDepthCl,
    /// All tasks shuffled together.
    Joint,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Nct => "NCT",
            Method::Er => "ER",
            Method::ContextDepth => "ContextDepth",
            Method::MonoDepthCl => "MonoDepthCL",
            Method::Joint => "Joint",
        }
    }

    pub fn rehearses(self) -> bool {
        matches!(self, Method::Er | Method::ContextDepth | Method::MonoDepthCl)
    }

    pub fn uses_context(self) -> bool {
        matches!(self, Method::ContextDepth | Method::MonoDepthCl)
    }

    /// Whether evaluation reads the context model.
    pub fn evaluates_context(self) -> bool {
        matches!(self, Method::ContextDepth)
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Nct, Method::Er, Method::ContextDepth, Method::MonoDepthCl, Method::Joint]
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(alloc::format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinualConfig {
    pub method: Method,
    pub buffer_capacity: usize,
    pub rehearsal_batch: usize,
    /// Weight of the consistency term.
    pub beta: f64,
    /// EMA decay ceiling.
    pub alpha: f64,
    /// Per-iteration probability of an EMA update.
    pub nu: f64,
    /// Omit the consistency term while learning the first task.
    pub warmup: bool,
    pub crop: CropConfig,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            method: Method::MonoDepthCl,
            buffer_capacity: 200,
            rehearsal_batch: 8,
            beta: 0.1,
            alpha: 0.999,
            nu: 0.05,
            warmup: true,
            crop: CropConfig::default(),
        }
    }
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(alloc::format!("beta {} must be non-negative", self.beta));
        }
        if self.method.uses_context() {
            if !(self.alpha > 0.0 && self.alpha < 1.0) {
                return bad(alloc::format!("alpha {} outside (0, 1)", self.alpha));
            }
            if !(self.nu > 0.0 && self.nu <= 1.0) {
                return bad(alloc::format!("nu {} outside (0, 1]", self.nu));
            }
        }
        if !(self.crop.std >= 0.0 && self.crop.mean.is_finite()) {
            return bad(String::from("invalid crop distribution"));
        }
        Ok(())
    }
}

/// A training triplet tagged with its task.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub triplet: Arc<Triplet>,
    pub task: usize,
    /// Upper bound of the disparity-to-depth mapping and evaluation clamp.
    pub depth_cap: f64,
}
