//! Exponential-moving-average consolidation of the context model.

use rand::Rng;

use crate::error::{Error, Result};
use crate::networks::ModelParams;
use crate::real::Real;
use crate::rng::{stream, Rng as StreamRng, Stream};
use crate::tensor::ParamSet;

/// Decay at iteration `n`: `min(1 − 1/(n+1), α)`, so the first update copies.
pub fn decay(n: u64, alpha: f64) -> f64 {
    (1.0 - 1.0 / (n as f64 + 1.0)).min(alpha)
}

/// `context ← a·context + (1−a)·working`, elementwise.
pub fn consolidate<T: Real>(context: &mut ParamSet<T>, working: &ParamSet<T>, a: f64) -> Result<()> {
    if !context.same_layout(working) {
        return Err(Error::invalid("ema", "working and context layouts differ"));
    }
    for (c, w) in context.tensors_mut().iter_mut().zip(working.tensors()) {
        if a == 0.0 {
            c.data_mut().copy_from_slice(w.data());
            continue;
        }
        let (a, b) = (T::c(a), T::c(1.0 - a));
        for (cv, &wv) in c.data_mut().iter_mut().zip(w.data()) {
            *cv = a * *cv + b * wv;
        }
    }
    Ok(())
}

/// Working model, its slow context copy, and the consolidation schedule.
#[derive(Debug, Clone)]
pub struct DualModel<T> {
    pub working: ModelParams<T>,
    pub context: ModelParams<T>,
    iteration: u64,
    alpha: f64,
    frequency: f64,
    rng: StreamRng,
}

impl<T: Real> DualModel<T> {
    pub fn new(working: ModelParams<T>, alpha: f64, frequency: f64, seed: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(alloc::format!("EMA decay {alpha} outside (0, 1)")));
        }
        if !(frequency > 0.0 && frequency <= 1.0) {
            return Err(Error::Config(alloc::format!("EMA frequency {frequency} outside (0, 1]")));
        }
        Ok(Self {
            context: working.clone(),
            working,
            iteration: 0,
            alpha,
            frequency,
            rng: stream(seed, Stream::Ema),
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Called once per training iteration after the working-model step. The
    /// context is updated when an independent Bernoulli(ν) draw succeeds;
    /// returns whether it fired.
    pub fn step(&mut self) -> Result<bool> {
        let fire = self.rng.random_bool(self.frequency);
        if fire {
            let a = decay(self.iteration, self.alpha);
            consolidate(&mut self.context.depth, &self.working.depth, a)?;
            consolidate(&mut self.context.pose, &self.working.pose, a)?;
        }
        self.iteration += 1;
        Ok(fire)
    }
}
