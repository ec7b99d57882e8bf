//! On-disk task datasets.
//!
//! A split directory holds `manifest.json` and one `sample_%06d.bin` per
//! triplet: little-endian binary32 values in the order frame t−1, frame t,
//! frame t+1 (each `3·H·W`), depth of frame t (`H·W`), pose t→t−1 (6) and
//! pose t→t+1 (6), poses as axis-angle followed by translation. A task
//! directory holds a `train` and a `test` split.

use std::path::{Path, PathBuf};

use depthcl_core::continual::TrainSample;
use depthcl_core::experiment::TaskData;
use depthcl_core::geometry::{CameraIntrinsics, Pose};
use depthcl_core::synth::{generate_sample, SceneSpec, Triplet, TEST_OFFSET};
use depthcl_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read, read_json, write_json};

pub const MANIFEST: &str = "manifest.json";
pub const TRAIN: &str = "train";
pub const TEST: &str = "test";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// Upper bound of predicted depth; the far plane of the scene.
    pub depth_cap: f64,
    pub seed: u64,
    /// Generator index of the first sample.
    #[serde(default)]
    pub first_index: u64,
}

impl Manifest {
    pub fn for_spec(spec: &SceneSpec, n_samples: usize, first_index: u64) -> Self {
        let k = spec.intrinsics;
        Self {
            name: spec.name.clone(),
            n_samples,
            height: spec.height,
            width: spec.width,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            d_min: spec.d_min,
            d_max: spec.d_max,
            depth_cap: spec.d_max,
            seed: spec.seed,
            first_index,
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
        }
    }

    /// Number of binary32 values in one sample file.
    pub fn sample_len(&self) -> usize {
        let hw = self.height * self.width;
        10 * hw + 12
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.n_samples == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::format(path, "sample count and image size must be positive"));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.depth_cap > 0.0) {
            return Err(Error::format(path, "invalid depth range"));
        }
        self.intrinsics()
            .validate()
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn sample_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("sample_{index:06}.bin"))
}

fn encode(t: &Triplet) -> Vec<u8> {
    let mut out = Vec::new();
    let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    for f in &t.frames {
        f.data().iter().copied().for_each(&mut put);
    }
    t.depth.data().iter().copied().for_each(&mut put);
    for p in &t.poses {
        p.to_array().iter().for_each(|&v| put(v as f32));
    }
    out
}

fn decode(m: &Manifest, bytes: &[u8], path: &Path, index: usize) -> Result<Triplet> {
    let expected = m.sample_len() * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("sample {index}: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let (h, w) = (m.height, m.width);
    let hw = h * w;
    let frame = |i: usize| Tensor::from_slice(&[3, h, w], &values[i * 3 * hw..(i + 1) * 3 * hw]);
    let frames = [frame(0)?, frame(1)?, frame(2)?];
    let depth = Tensor::from_slice(&[h, w], &values[9 * hw..10 * hw])?;
    let pose = |o: usize| {
        let v: Vec<f64> = values[o..o + 6].iter().map(|&x| x as f64).collect();
        Pose::from_slice(&v)
    };
    let poses = [pose(10 * hw), pose(10 * hw + 6)];
    if !poses.iter().all(Pose::is_finite) {
        return Err(Error::format(path, format!("sample {index}: non-finite pose")));
    }
    Ok(Triplet {
        frames,
        depth,
        poses,
        intrinsics: m.intrinsics(),
    })
}

/// Writes a split directory.
pub fn write_dataset(dir: &Path, triplets: &[Triplet], manifest: &Manifest) -> Result<()> {
    if triplets.len() != manifest.n_samples {
        return Err(Error::Input(format!(
            "manifest lists {} samples, got {}",
            manifest.n_samples,
            triplets.len()
        )));
    }
    for (i, t) in triplets.iter().enumerate() {
        if t.depth.shape() != [manifest.height, manifest.width] {
            return Err(Error::Input(format!("sample {i}: image size differs from the manifest")));
        }
        atomic_write(&sample_path(dir, i), &encode(t))?;
    }
    write_json(&dir.join(MANIFEST), manifest)
}

/// Reads a split directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<Triplet>)> {
    let mpath = dir.join(MANIFEST);
    let manifest: Manifest = read_json(&mpath)?;
    manifest.validate(&mpath)?;
    let triplets = (0..manifest.n_samples)
        .map(|i| {
            let p = sample_path(dir, i);
            let bytes = read(&p)?;
            decode(&manifest, &bytes, &p, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, triplets))
}

/// Generates and writes the train and test splits of one task.
pub fn generate_task_dir(dir: &Path, spec: &SceneSpec, n_train: usize, n_test: usize) -> Result<()> {
    spec.validate()?;
    for (split, first, n) in [(TRAIN, 0, n_train), (TEST, TEST_OFFSET, n_test)] {
        let triplets = (first..first + n as u64)
            .map(|i| generate_sample(spec, i))
            .collect::<depthcl_core::Result<Vec<_>>>()?;
        write_dataset(&dir.join(split), &triplets, &Manifest::for_spec(spec, n, first))?;
    }
    Ok(())
}

fn tag(triplets: Vec<Triplet>, task: usize, cap: f64) -> Vec<TrainSample> {
    triplets
        .into_iter()
        .map(|t| TrainSample {
            triplet: t.into(),
            task,
            depth_cap: cap,
        })
        .collect()
}

/// Loads a task directory as task number `task` (0-based).
pub fn load_task(dir: &Path, task: usize) -> Result<TaskData> {
    if !dir.is_dir() {
        return Err(Error::Input(format!("dataset directory {} does not exist", dir.display())));
    }
    let (mtrain, train) = read_dataset(&dir.join(TRAIN))?;
    let (mtest, test) = read_dataset(&dir.join(TEST))?;
    if (mtrain.height, mtrain.width) != (mtest.height, mtest.width) {
        return Err(Error::format(dir, "train and test image sizes differ"));
    }
    Ok(TaskData {
        name: mtrain.name.clone(),
        train: tag(train, task, mtrain.depth_cap),
        test: tag(test, task, mtest.depth_cap),
    })
}

/// Loads only the test split of a task directory.
pub fn load_test_split(dir: &Path, task: usize) -> Result<(Manifest, Vec<TrainSample>)> {
    if !dir.is_dir() {
        return Err(Error::Input(format!("dataset directory {} does not exist", dir.display())));
    }
    let (m, test) = read_dataset(&dir.join(TEST))?;
    let cap = m.depth_cap;
    Ok((m, tag(test, task, cap)))
}
