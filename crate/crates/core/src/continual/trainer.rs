use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::buffer::ReplayBuffer;
use super::ema::DualModel;
use super::stc::stc_loss;
use super::{ContinualConfig, Method, TrainSample};
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::losses::{depth_task_loss, disp_to_depth_batch, DepthLossInputs, LossConfig};
use crate::networks::{depth_forward, pose_forward, Bound, ModelParams, NetworkConfig};
use crate::rng::{stream, Rng as StreamRng, Stream};
use crate::tensor::{Adam, AdamConfig, ParamSet, Tape, Tensor, Var};

/// Lower bound of the disparity-to-depth mapping.
pub const MIN_DEPTH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainerConfig {
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub continual: ContinualConfig,
    pub adam: AdamConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub depth: f64,
    /// Consistency term, when computed.
    pub stc: Option<f64>,
    pub total: f64,
    /// Memory samples rehearsed in this step.
    pub rehearsed: usize,
}

/// Stacked image tensors of a set of samples.
pub struct Batch {
    pub target: Tensor<f32>,
    pub sources: [Tensor<f32>; 2],
    pub intrinsics: Tensor<f32>,
    pub bounds: Vec<(f64, f64)>,
}

impl Batch {
    pub fn new(items: &[&TrainSample]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("batch", "no samples"));
        }
        let stack = |f: usize| Tensor::stack(&items.iter().map(|s| &s.triplet.frames[f]).collect::<Vec<_>>());
        let ks: Vec<CameraIntrinsics> = items.iter().map(|s| s.triplet.intrinsics).collect();
        Ok(Self {
            target: stack(1)?,
            sources: [stack(0)?, stack(2)?],
            intrinsics: CameraIntrinsics::batch_tensor(&ks)?,
            bounds: items.iter().map(|s| (MIN_DEPTH, s.depth_cap)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }
}

struct Prediction {
    disps: Vec<Var>,
    axis_angles: [Var; 2],
    translations: [Var; 2],
    intrinsics: Var,
}

/// Runs both networks on a batch already on the tape. Intrinsics are the
/// ground truth unless learned, in which case the two pair estimates are
/// averaged.
fn predict<T: crate::Real>(
    tape: &mut Tape<T>,
    cfg: &NetworkConfig,
    params: &Bound,
    target: Var,
    sources: [Var; 2],
    gt_k: Var,
) -> Result<Prediction> {
    let n = tape.shape(target)[0];
    let disps = depth_forward(tape, cfg, params, target)?;
    let src = tape.concat(&sources, 0)?;
    let tgt = tape.concat(&[target, target], 0)?;
    let pose = pose_forward(tape, cfg, params, src, tgt)?;
    let mut aa = [pose.axis_angle; 2];
    let mut tr = [pose.translation; 2];
    for j in 0..2 {
        aa[j] = tape.narrow(pose.axis_angle, 0, j * n, n)?;
        tr[j] = tape.narrow(pose.translation, 0, j * n, n)?;
    }
    let intrinsics = match pose.intrinsics {
        Some(k) => {
            let a = tape.narrow(k, 0, 0, n)?;
            let b = tape.narrow(k, 0, n, n)?;
            let s = tape.add(a, b)?;
            tape.scale(s, 0.5)
        }
        None => gt_k,
    };
    Ok(Prediction {
        disps,
        axis_angles: aa,
        translations: tr,
        intrinsics,
    })
}

/// Owns the models, optimizers, memory and random streams of one run.
pub struct Trainer {
    cfg: TrainerConfig,
    dual: DualModel<f32>,
    buffer: ReplayBuffer<TrainSample>,
    adam_depth: Adam<f32>,
    adam_pose: Adam<f32>,
    crop_rng: StreamRng,
    steps: u64,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig, seed: u64) -> Result<Self> {
        cfg.network.validate()?;
        cfg.loss.validate()?;
        cfg.continual.validate()?;
        let working = ModelParams::init(&cfg.network, &mut stream(seed, Stream::Init))?;
        Self::with_params(cfg, working, seed)
    }

    pub fn with_params(cfg: TrainerConfig, working: ModelParams<f32>, seed: u64) -> Result<Self> {
        working.check_layout(&cfg.network)?;
        // Only validated when a context model is used.
        let (alpha, nu) = if cfg.continual.method.uses_context() {
            (cfg.continual.alpha, cfg.continual.nu)
        } else {
            (0.5, 0.5)
        };
        let dual = DualModel::new(working, alpha, nu, seed)?;
        Ok(Self {
            adam_depth: Adam::new(cfg.adam, &dual.working.depth),
            adam_pose: Adam::new(cfg.adam, &dual.working.pose),
            buffer: ReplayBuffer::new(cfg.continual.buffer_capacity, seed),
            crop_rng: stream(seed, Stream::Crop),
            steps: 0,
            dual,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn method(&self) -> Method {
        self.cfg.continual.method
    }

    /// Whether rehearsal is requested but the memory has no capacity, which
    /// makes the run equivalent to sequential fine-tuning.
    pub fn rehearsal_disabled(&self) -> bool {
        self.method().rehearses() && self.cfg.continual.buffer_capacity == 0
    }

    pub fn working(&self) -> &ModelParams<f32> {
        &self.dual.working
    }

    pub fn context(&self) -> &ModelParams<f32> {
        &self.dual.context
    }

    pub fn dual(&self) -> &DualModel<f32> {
        &self.dual
    }

    /// Optimization steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn buffer(&self) -> &ReplayBuffer<TrainSample> {
        &self.buffer
    }

    /// Parameters used for evaluation by this method.
    pub fn eval_params(&self) -> &ModelParams<f32> {
        if self.method().evaluates_context() {
            &self.dual.context
        } else {
            &self.dual.working
        }
    }

    /// Fresh optimizer state and learning rate, e.g. at a task boundary.
    pub fn reset_optimizer(&mut self, lr: f64) {
        let cfg = AdamConfig { lr, ..self.cfg.adam };
        self.adam_depth = Adam::new(cfg, &self.dual.working.depth);
        self.adam_pose = Adam::new(cfg, &self.dual.working.pose);
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam_depth.set_lr(lr);
        self.adam_pose.set_lr(lr);
    }

    /// One optimization step on a stream batch of task `task` (0-based).
    pub fn step(&mut self, stream_batch: &[TrainSample], task: usize) -> Result<StepLosses> {
        let method = self.method();
        let cc = self.cfg.continual;
        let memory = if method.rehearses() {
            self.buffer.sample(cc.rehearsal_batch).unwrap_or_default()
        } else {
            Vec::new()
        };
        let union: Vec<&TrainSample> = stream_batch.iter().chain(&memory).collect();
        let batch = Batch::new(&union)?;
        let (nb, nm) = (stream_batch.len(), memory.len());

        let mut tape = Tape::<f32>::new();
        let wm = self.dual.working.bind(&mut tape, true);
        let target = tape.constant(batch.target);
        let [s0, s1] = batch.sources;
        let sources = [tape.constant(s0), tape.constant(s1)];
        let gt_k = tape.constant(batch.intrinsics);
        let pred = predict(&mut tape, &self.cfg.network, &wm, target, sources, gt_k)?;
        // A diverged network yields NaN disparities, which projection would
        // report as invalid depth.
        if pred.disps.iter().any(|&d| tape.value(d).data().iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss {
                iteration: self.steps,
            });
        }
        let depth = depth_task_loss(
            &mut tape,
            &DepthLossInputs {
                target,
                sources: &sources,
                disps: &pred.disps,
                axis_angles: &pred.axis_angles,
                translations: &pred.translations,
                intrinsics: pred.intrinsics,
                depth_bounds: &batch.bounds,
            },
            &self.cfg.loss,
        )?;

        let consistency = method == Method::MonoDepthCl && nm > 0 && cc.beta > 0.0 && !(cc.warmup && task == 0);
        let mut total = depth.loss;
        let mut stc_value = None;
        if consistency {
            let stc = self.consistency(&mut tape, &depth.warped, target, sources, gt_k, &batch.bounds, nb, nm)?;
            stc_value = Some(tape.value(stc).item() as f64);
            let weighted = tape.scale(stc, cc.beta);
            total = tape.add(total, weighted)?;
        }

        let depth_value = tape.value(depth.loss).item() as f64;
        let total_value = tape.value(total).item() as f64;
        if !total_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.steps,
            });
        }
        tape.backward(total)?;
        let grads = |tape: &mut Tape<f32>, vars: &[Var]| vars.iter().map(|&v| tape.take_grad(v)).collect::<Vec<_>>();
        let gd = grads(&mut tape, &wm.depth);
        let gp = grads(&mut tape, &wm.pose);
        step_set(&mut self.adam_depth, &mut self.dual.working.depth, &gd)?;
        step_set(&mut self.adam_pose, &mut self.dual.working.pose, &gp)?;

        if method.rehearses() {
            for s in stream_batch {
                self.buffer.insert(s.clone());
            }
        }
        if method.uses_context() {
            self.dual.step()?;
        }
        self.steps += 1;
        Ok(StepLosses {
            depth: depth_value,
            stc: stc_value,
            total: total_value,
            rehearsed: nm,
        })
    }

    /// Consistency between the context model's syntheses of the memory rows
    /// and the working model's syntheses of the same rows.
    #[allow(clippy::too_many_arguments)]
    fn consistency(
        &mut self,
        tape: &mut Tape<f32>,
        warped: &[Vec<Var>],
        target: Var,
        sources: [Var; 2],
        gt_k: Var,
        bounds: &[(f64, f64)],
        nb: usize,
        nm: usize,
    ) -> Result<Var> {
        let rows = |tape: &mut Tape<f32>, v: Var| tape.narrow(v, 0, nb, nm);
        let mt = rows(tape, target)?;
        let ms = [rows(tape, sources[0])?, rows(tape, sources[1])?];
        let mk = rows(tape, gt_k)?;
        let cm = self.dual.context.bind(tape, false);
        let ctx = predict(tape, &self.cfg.network, &cm, mt, ms, mk)?;
        let mut ctx_warped = Vec::with_capacity(ctx.disps.len());
        let mut wm_warped = Vec::with_capacity(ctx.disps.len());
        for (i, &disp) in ctx.disps.iter().enumerate() {
            let d = disp_to_depth_batch(tape, disp, &bounds[nb..])?;
            let mut c_i = Vec::with_capacity(2);
            let mut w_i = Vec::with_capacity(2);
            for j in 0..2 {
                c_i.push(tape.view_synthesis(ms[j], d, ctx.axis_angles[j], ctx.translations[j], ctx.intrinsics)?);
                w_i.push(rows(tape, warped[i][j])?);
            }
            ctx_warped.push(c_i);
            wm_warped.push(w_i);
        }
        stc_loss(tape, &ctx_warped, &wm_warped, &self.cfg.loss, &self.cfg.continual.crop, &mut self.crop_rng)
    }
}

fn step_set(adam: &mut Adam<f32>, params: &mut ParamSet<f32>, grads: &[Option<Vec<f32>>]) -> Result<()> {
    adam.step(params, grads)
}

/// Full-resolution depth of a batch of target images.
pub fn predict_depth(params: &ModelParams<f32>, cfg: &NetworkConfig, images: Tensor<f32>, bounds: &[(f64, f64)]) -> Result<Tensor<f32>> {
    let mut tape = Tape::<f32>::new();
    let b = params.bind(&mut tape, false);
    let x = tape.constant(images);
    let disps = depth_forward(&mut tape, cfg, &b, x)?;
    let d = disp_to_depth_batch(&mut tape, disps[0], bounds)?;
    Ok(tape.value(d).clone())
}
