use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HyKeyConfig, HyKeyNetwork, ModelError, Result};
use crate::tensor::Tensor;

const FORMAT: &str = "hykey-checkpoint";
const VERSION: u32 = 1;
const RUNNING_MEAN: &str = "head.bn.running_mean";
const RUNNING_VAR: &str = "head.bn.running_var";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub config: HyKeyConfig,
    pub epoch: usize,
    pub step: u64,
    /// Free-form run metadata (training config, seed, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Network parameters, batch-norm statistics and any extra named tensors
/// (optimiser moments) with their metadata.
///
/// Layout: u32 LE metadata length, JSON metadata, then each tensor listed in
/// the metadata as raw little-endian f32 in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_network(
        net: &HyKeyNetwork,
        epoch: usize,
        step: u64,
        extra: serde_json::Value,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor)> = net
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        let (mean, var) = net.running_stats();
        let d = mean.len();
        tensors.push((
            RUNNING_MEAN.into(),
            Tensor::new([d], mean.to_vec()).unwrap(),
        ));
        tensors.push((RUNNING_VAR.into(), Tensor::new([d], var.to_vec()).unwrap()));
        Self {
            meta: CheckpointMeta {
                format: FORMAT.into(),
                version: VERSION,
                config: net.config().clone(),
                epoch,
                step,
                extra,
                tensors: vec![],
            },
            tensors,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the network, checking every parameter against the shapes the
    /// stored config implies.
    pub fn to_network(&self) -> Result<HyKeyNetwork> {
        let mut net = HyKeyNetwork::new(self.meta.config.clone(), 0)?;
        for p in net.params_mut() {
            let t = self
                .get(&p.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "{}: stored shape {:?}, config implies {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        let d = self.meta.config.descriptor_dim;
        let stat = |name: &str| -> Result<Vec<f32>> {
            let t = self
                .get(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != [d] {
                return Err(ModelError::Checkpoint(format!(
                    "{name}: shape {:?}, expected [{d}]",
                    t.shape()
                )));
            }
            Ok(t.data().to_vec())
        };
        net.set_running_stats(stat(RUNNING_MEAN)?, stat(RUNNING_VAR)?);
        Ok(net)
    }

    /// Like [`Checkpoint::to_network`], refusing a config other than `expected`.
    pub fn to_network_checked(&self, expected: &HyKeyConfig) -> Result<HyKeyNetwork> {
        if &self.meta.config != expected {
            let a = serde_json::to_value(&self.meta.config).unwrap_or_default();
            let b = serde_json::to_value(expected).unwrap_or_default();
            let diff: Vec<String> = match (a, b) {
                (serde_json::Value::Object(a), serde_json::Value::Object(b)) => a
                    .iter()
                    .filter(|(k, v)| b.get(*k) != Some(*v))
                    .map(|(k, v)| {
                        format!(
                            "{k}: stored {v}, expected {}",
                            b.get(k).cloned().unwrap_or_default()
                        )
                    })
                    .collect(),
                _ => vec![],
            };
            return Err(ModelError::Checkpoint(format!(
                "config mismatch ({})",
                diff.join("; ")
            )));
        }
        self.to_network()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut meta = self.meta.clone();
        meta.tensors = self
            .tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let json = serde_json::to_vec(&meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, t) in &self.tensors {
            let mut buf = Vec::with_capacity(4 * t.len());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)
            .map_err(|_| ModelError::Checkpoint("truncated metadata length".into()))?;
        let len = u32::from_le_bytes(len) as usize;
        if len > 1 << 26 {
            return Err(ModelError::Checkpoint(format!("metadata of {len} bytes")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|_| ModelError::Checkpoint("truncated metadata".into()))?;
        let meta: CheckpointMeta = serde_json::from_slice(&json)
            .map_err(|e| ModelError::Checkpoint(format!("metadata: {e}")))?;
        if meta.format != FORMAT || meta.version != VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format {:?} version {}",
                meta.format, meta.version
            )));
        }
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for e in &meta.tensors {
            let n: usize = e.shape.iter().product();
            let mut buf = vec![0u8; 4 * n];
            r.read_exact(&mut buf)
                .map_err(|_| ModelError::Checkpoint(format!("truncated tensor {}", e.name)))?;
            let data = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(ModelError::Checkpoint(
                "trailing bytes after last tensor".into(),
            ));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
