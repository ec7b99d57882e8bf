//! Model checkpoints.
//!
//! Layout: the magic line `DEPTHCL-CKPT 1\n`, a little-endian u64 header
//! length, a JSON header, then every tensor's values as little-endian binary32
//! in header order.

use std::path::Path;

use depthcl_core::networks::{ModelParams, NetworkConfig};
use depthcl_core::tensor::ParamSet;
use depthcl_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read};

const MAGIC: &[u8] = b"DEPTHCL-CKPT 1\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    /// Free-form description such as `working` or `context`.
    role: String,
    /// Number of tasks trained so far.
    tasks_seen: usize,
    depth: Vec<Entry>,
    pose: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub role: String,
    pub tasks_seen: usize,
    pub params: ModelParams<f32>,
}

fn entries(set: &ParamSet<f32>) -> Vec<Entry> {
    set.iter()
        .map(|(n, t)| Entry {
            name: n.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            network: self.network,
            role: self.role.clone(),
            tasks_seen: self.tasks_seen,
            depth: entries(&self.params.depth),
            pose: entries(&self.params.pose),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Input(e.to_string()))?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 4 * self.params.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.depth.tensors().iter().chain(self.params.pose.tensors()) {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::format(path, "not a checkpoint file"))?;
        if rest.len() < 8 {
            return Err(Error::format(path, "truncated header"));
        }
        let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        let rest = &rest[8..];
        if rest.len() < len {
            return Err(Error::format(path, "truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&rest[..len]).map_err(|e| Error::format(path, format!("header: {e}")))?;
        let mut blob = &rest[len..];
        let mut take = |entries: &[Entry]| -> Result<ParamSet<f32>> {
            let mut set = ParamSet::new();
            for e in entries {
                let n: usize = e.shape.iter().product();
                if blob.len() < 4 * n {
                    return Err(Error::format(path, format!("truncated data for `{}`", e.name)));
                }
                let data = blob[..4 * n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                blob = &blob[4 * n..];
                set.push(e.name.clone(), Tensor::new(&e.shape, data)?);
            }
            Ok(set)
        };
        let depth = take(&header.depth)?;
        let pose = take(&header.pose)?;
        if !blob.is_empty() {
            return Err(Error::format(path, format!("{} trailing bytes", blob.len())));
        }
        let params = ModelParams { depth, pose };
        params
            .check_layout(&header.network)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(Self {
            network: header.network,
            role: header.role,
            tasks_seen: header.tasks_seen,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read(path)?, path)
    }
}
