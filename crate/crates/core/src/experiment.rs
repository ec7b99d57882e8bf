//! Sequential multi-task training with evaluation after every task.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::continual::{predict_depth, Batch, Method, StepLosses, TrainSample, Trainer, TrainerConfig, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::metrics::{depth_metrics, DepthMetrics, EvalOptions, PerformanceMatrix};
use crate::networks::{ModelParams, NetworkConfig};
use crate::rng::{stream, Stream};
use crate::synth::Triplet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub epochs: usize,
    pub lr: f64,
    /// Number of epochs of each task run at the initial rate before decay.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub eval_batch: usize,
    /// Also evaluate unseen tasks after each task, for diagnostics.
    pub eval_all: bool,
    pub median_scale: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 1e-4,
            decay_epoch: 4,
            decay_factor: 0.1,
            batch_size: 8,
            eval_batch: 16,
            eval_all: false,
            median_scale: true,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Config(String::from("epochs and batch sizes must be positive")));
        }
        if !(self.lr > 0.0 && self.decay_factor > 0.0) {
            return Err(Error::Config(String::from("learning rate and decay must be positive")));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.lr * self.decay_factor
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskData {
    pub name: String,
    pub train: Vec<TrainSample>,
    pub test: Vec<TrainSample>,
}

impl TaskData {
    pub fn new(name: impl Into<String>, task: usize, depth_cap: f64, train: Vec<Triplet>, test: Vec<Triplet>) -> Self {
        let tag = |v: Vec<Triplet>| {
            v.into_iter()
                .map(|t| TrainSample {
                    triplet: Arc::new(t),
                    task,
                    depth_cap,
                })
                .collect()
        };
        Self {
            name: name.into(),
            train: tag(train),
            test: tag(test),
        }
    }

    /// All tasks as one, for joint training.
    pub fn merged(tasks: &[TaskData]) -> Self {
        Self {
            name: tasks.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join("+"),
            train: tasks.iter().flat_map(|t| t.train.iter().cloned()).collect(),
            test: tasks.iter().flat_map(|t| t.test.iter().cloned()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based task and epoch within the task.
    pub task: usize,
    pub epoch: usize,
    pub depth: f64,
    pub stc: f64,
    pub total: f64,
}

/// Hooks into a running experiment.
pub trait Observer {
    fn on_step(&mut self, _task: usize, _iteration: u64, _losses: &StepLosses) {}

    fn on_epoch(&mut self, _record: &EpochRecord) {}

    /// Called after task `task` (0-based) is trained and its matrix row filled.
    fn on_task_end(&mut self, _task: usize, _trainer: &Trainer, _matrix: &PerformanceMatrix) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

pub struct RunOutput {
    pub matrix: PerformanceMatrix,
    pub epochs: Vec<EpochRecord>,
    pub trainer: Trainer,
}

/// Depth metrics of a model on a sample set, averaged over images.
pub fn evaluate(
    params: &ModelParams<f32>,
    cfg: &NetworkConfig,
    samples: &[TrainSample],
    batch: usize,
    median_scale: bool,
) -> Result<DepthMetrics> {
    let mut per_image = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&TrainSample> = chunk.iter().collect();
        let b = Batch::new(&refs)?;
        let pred = predict_depth(params, cfg, b.target, &b.bounds)?;
        let hw = cfg.height * cfg.width;
        for (k, s) in chunk.iter().enumerate() {
            let p: Vec<f64> = pred.data()[k * hw..(k + 1) * hw].iter().map(|&v| v as f64).collect();
            let g: Vec<f64> = s.triplet.depth.data().iter().map(|&v| v as f64).collect();
            let opts = EvalOptions {
                median_scale,
                clamp: Some((MIN_DEPTH, s.depth_cap)),
            };
            per_image.push(depth_metrics(&p, &g, &opts)?);
        }
    }
    DepthMetrics::mean(&per_image)
}

/// Trains on the tasks in order (or all at once for the joint method) and
/// fills the performance matrix after each task.
pub fn run(
    trainer_cfg: TrainerConfig,
    schedule: &Schedule,
    tasks: &[TaskData],
    seed: u64,
    observer: &mut dyn Observer,
) -> Result<RunOutput> {
    schedule.validate()?;
    if tasks.is_empty() {
        return Err(Error::Config(String::from("no tasks")));
    }
    let mut trainer = Trainer::new(trainer_cfg, seed)?;
    let merged;
    let tasks: &[TaskData] = if trainer.method() == Method::Joint {
        merged = [TaskData::merged(tasks)];
        &merged
    } else {
        tasks
    };
    let n = tasks.len();
    let mut matrix = PerformanceMatrix::new(n);
    let mut epochs = Vec::new();
    let mut data_rng = stream(seed, Stream::Data);
    let mut iteration = 0u64;
    for (t, task) in tasks.iter().enumerate() {
        if task.train.is_empty() {
            return Err(Error::Config(alloc::format!("task `{}` has no training samples", task.name)));
        }
        trainer.reset_optimizer(schedule.lr_at(0));
        let mut order: Vec<usize> = (0..task.train.len()).collect();
        for e in 0..schedule.epochs {
            trainer.set_lr(schedule.lr_at(e));
            order.shuffle(&mut data_rng);
            let (mut depth, mut stc, mut total, mut steps) = (0.0, 0.0, 0.0, 0usize);
            for chunk in order.chunks(schedule.batch_size) {
                let batch: Vec<TrainSample> = chunk.iter().map(|&i| task.train[i].clone()).collect();
                let losses = trainer.step(&batch, t)?;
                observer.on_step(t, iteration, &losses);
                iteration += 1;
                depth += losses.depth;
                stc += losses.stc.unwrap_or(0.0);
                total += losses.total;
                steps += 1;
            }
            let k = steps as f64;
            let rec = EpochRecord {
                task: t + 1,
                epoch: e + 1,
                depth: depth / k,
                stc: stc / k,
                total: total / k,
            };
            observer.on_epoch(&rec);
            epochs.push(rec);
        }
        let cols = if schedule.eval_all { n } else { t + 1 };
        for (j, eval_task) in tasks.iter().enumerate().take(cols) {
            let m = evaluate(
                trainer.eval_params(),
                &trainer_cfg.network,
                &eval_task.test,
                schedule.eval_batch,
                schedule.median_scale,
            )?;
            matrix.set(t, j, m);
        }
        observer.on_task_end(t, &trainer, &matrix)?;
    }
    Ok(RunOutput {
        matrix,
        epochs,
        trainer,
    })
}
