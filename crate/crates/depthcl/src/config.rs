use std::path::{Path, PathBuf};

use depthcl_core::continual::TrainerConfig;
use depthcl_core::experiment::Schedule;
use depthcl_core::metrics::SptoNormalization;
use depthcl_core::synth::{default_suite, SceneSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::read_json;

/// Everything `train` needs. Unlisted fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Task directories in training order; relative paths resolve against the
    /// config file's directory.
    pub tasks: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(flatten)]
    pub trainer: TrainerConfig,
    pub schedule: Schedule,
    pub spto_normalization: SptoNormalization,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tasks: Vec::new(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            trainer: TrainerConfig::default(),
            schedule: Schedule::default(),
            spto_normalization: SptoNormalization::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for t in &mut cfg.tasks {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Input(String::from("config lists no tasks")));
        }
        self.trainer.network.validate()?;
        self.trainer.loss.validate()?;
        self.trainer.continual.validate()?;
        self.schedule.validate()?;
        Ok(())
    }
}

/// Input of `generate`: image size, split sizes and the task list. Without
/// explicit tasks the default four-task suite is generated from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub tasks: Option<Vec<SceneSpec>>,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 96,
            seed: 0,
            train_samples: 1000,
            test_samples: 100,
            tasks: None,
        }
    }
}

impl SuiteSpec {
    pub fn scenes(&self) -> Result<Vec<SceneSpec>> {
        let scenes = match &self.tasks {
            Some(t) => t.clone(),
            None => default_suite(self.height, self.width, self.seed),
        };
        if scenes.is_empty() {
            return Err(Error::Input(String::from("suite has no tasks")));
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return Err(Error::Input(String::from("train and test sample counts must be positive")));
        }
        for s in &scenes {
            s.validate()?;
        }
        Ok(scenes)
    }
}
