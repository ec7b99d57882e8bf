//! The four subcommands as library functions.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use depthcl_core::continual::{StepLosses, Trainer};
use depthcl_core::experiment::{evaluate, run, EpochRecord, Observer, TaskData};
use depthcl_core::metrics::{DepthMetrics, PerformanceMatrix, SptoNormalization};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, SuiteSpec};
use crate::dataset::{generate_task_dir, load_task, load_test_split};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, write_json};
use crate::report::{write_report, Report};
use crate::tables::{loss_csv, matrix_csv, read_matrix_csv};

pub const MATRIX_FILE: &str = "matrix.csv";
pub const LOSS_FILE: &str = "losses.csv";
pub const CONFIG_FILE: &str = "config.json";

pub fn task_checkpoint(out: &Path, task: usize) -> PathBuf {
    out.join("checkpoints").join(format!("task_{task:02}.ckpt"))
}

/// Writes every task of the suite under `out/<name>/{train,test}` and
/// returns one summary line per task.
pub fn generate(spec: &SuiteSpec, out: &Path) -> Result<Vec<String>> {
    let scenes = spec.scenes()?;
    let mut names = HashSet::new();
    for s in &scenes {
        if s.name.is_empty() || s.name.contains(['/', '\\']) || s.name == "." || s.name == ".." {
            return Err(Error::Input(format!("task name `{}` is not a valid directory name", s.name)));
        }
        if !names.insert(s.name.as_str()) {
            return Err(Error::Input(format!("duplicate task name `{}`", s.name)));
        }
    }
    let mut lines = Vec::new();
    for s in &scenes {
        let dir = out.join(&s.name);
        generate_task_dir(&dir, s, spec.train_samples, spec.test_samples)?;
        let k = s.intrinsics;
        lines.push(format!(
            "{}: {} train / {} test, {}x{}, depth {}..{}, fx {:.2} fy {:.2} -> {}",
            s.name,
            spec.train_samples,
            spec.test_samples,
            s.height,
            s.width,
            s.d_min,
            s.d_max,
            k.fx,
            k.fy,
            dir.display()
        ));
    }
    Ok(lines)
}

pub struct TrainOutput {
    pub matrix: PerformanceMatrix,
    pub epochs: Vec<EpochRecord>,
    pub trainer: Trainer,
}

struct Progress<'a> {
    out: &'a Path,
    names: Vec<String>,
}

impl Observer for Progress<'_> {
    fn on_step(&mut self, task: usize, iteration: u64, l: &StepLosses) {
        if iteration % 100 == 0 {
            log::debug!("task {} iteration {iteration}: depth {:.5} total {:.5}", task + 1, l.depth, l.total);
        }
    }

    fn on_epoch(&mut self, r: &EpochRecord) {
        log::info!(
            "task {} epoch {}: L_depth {:.5} L_STC {:.5} L_total {:.5}",
            r.task,
            r.epoch,
            r.depth,
            r.stc,
            r.total
        );
    }

    fn on_task_end(&mut self, t: usize, trainer: &Trainer, m: &PerformanceMatrix) -> depthcl_core::Result<()> {
        for j in 0..m.n_tasks() {
            if let Some(d) = m.get(t, j) {
                log::info!(
                    "after task {}: {} abs_rel {:.4} rmse {:.4} a1 {:.4}",
                    t + 1,
                    self.names.get(j).map_or("?", String::as_str),
                    d.abs_rel,
                    d.rmse,
                    d.a1
                );
            }
        }
        let ckpt = Checkpoint {
            network: trainer.config().network,
            role: String::from(if trainer.method().evaluates_context() { "context" } else { "working" }),
            tasks_seen: t + 1,
            params: trainer.eval_params().clone(),
        };
        ckpt.save(&task_checkpoint(self.out, t + 1))
            .map_err(|e| depthcl_core::Error::Config(e.to_string()))
    }
}

/// Trains the configured task sequence and writes the matrix, loss log,
/// resolved config and checkpoints under the output directory.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let tasks = cfg
        .tasks
        .iter()
        .enumerate()
        .map(|(i, dir)| load_task(dir, i))
        .collect::<Result<Vec<TaskData>>>()?;
    let out = cfg.output_dir.as_path();
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let mut progress = Progress {
        out,
        names: tasks.iter().map(|t| t.name.clone()).collect(),
    };
    let r = run(cfg.trainer, &cfg.schedule, &tasks, cfg.seed, &mut progress)?;
    atomic_write(&out.join(MATRIX_FILE), &matrix_csv(&r.matrix)?)?;
    atomic_write(&out.join(LOSS_FILE), &loss_csv(&r.epochs)?)?;
    let n = r.matrix.n_tasks();
    for (role, params) in [("working", r.trainer.working()), ("context", r.trainer.context())] {
        Checkpoint {
            network: cfg.trainer.network,
            role: String::from(role),
            tasks_seen: n,
            params: params.clone(),
        }
        .save(&out.join(format!("{role}.ckpt")))?;
    }
    Ok(TrainOutput {
        matrix: r.matrix,
        epochs: r.epochs,
        trainer: r.trainer,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskEval {
    pub task: String,
    pub dir: PathBuf,
    #[serde(flatten)]
    pub metrics: DepthMetrics,
}

/// Evaluates one checkpoint on the test split of every task, without using
/// task identity.
pub fn eval(checkpoint: &Path, tasks: &[PathBuf], batch: usize, median_scale: bool) -> Result<Vec<TaskEval>> {
    if tasks.is_empty() {
        return Err(Error::Input(String::from("no task directories given")));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    tasks
        .iter()
        .enumerate()
        .map(|(i, dir)| {
            let (m, test) = load_test_split(dir, i)?;
            if (m.height, m.width) != (ckpt.network.height, ckpt.network.width) {
                return Err(Error::Input(format!(
                    "{}: images are {}x{} but the checkpoint expects {}x{}",
                    dir.display(),
                    m.height,
                    m.width,
                    ckpt.network.height,
                    ckpt.network.width
                )));
            }
            let metrics = evaluate(&ckpt.params, &ckpt.network, &test, batch, median_scale)?;
            Ok(TaskEval {
                task: m.name,
                dir: dir.clone(),
                metrics,
            })
        })
        .collect()
}

pub fn report(matrix: &Path, out: &Path, norm: SptoNormalization) -> Result<Report> {
    let m = read_matrix_csv(matrix)?;
    write_report(out, &m, norm)
}
