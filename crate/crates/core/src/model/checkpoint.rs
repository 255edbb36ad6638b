//! Binary checkpoint container. Layout is described in `docs/checkpoint.md`.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{LoraConfig, LoraSet, ModelConfig, ParamStore};
use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 8] = b"CATLABCK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("vocabulary fingerprint {found} does not match checkpoint {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// Named state buffers, e.g. first and second moments per parameter.
    pub buffers: IndexMap<String, Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab_sha256: String,
    pub params: ParamStore<f32>,
    pub lora: Option<LoraSet<f32>>,
    pub optimizer: Option<OptimizerState>,
    /// Free-form run metadata.
    pub meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Param,
    Lora,
    Optim,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    group: Group,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_sha256: String,
    lora: Option<LoraConfig>,
    optimizer_step: Option<u64>,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

impl Checkpoint {
    pub fn check_vocab(&self, fingerprint: &str) -> Result<(), CheckpointError> {
        if self.vocab_sha256 != fingerprint {
            return Err(CheckpointError::VocabMismatch {
                expected: self.vocab_sha256.clone(),
                found: fingerprint.to_string(),
            });
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), CheckpointError> {
        let mut tensors = Vec::new();
        let mut payload: Vec<f32> = Vec::new();
        let mut push = |group: Group, name: &str, shape: Vec<usize>, data: &[f32]| {
            tensors.push(Entry { group, name: name.to_string(), shape, offset: payload.len() });
            payload.extend_from_slice(data);
        };
        for (name, t) in self.params.iter() {
            push(Group::Param, name, t.shape().to_vec(), t.data());
        }
        if let Some(lora) = &self.lora {
            for (name, t) in lora.params.iter() {
                push(Group::Lora, name, t.shape().to_vec(), t.data());
            }
        }
        if let Some(opt) = &self.optimizer {
            for (name, buf) in &opt.buffers {
                push(Group::Optim, name, vec![buf.len()], buf);
            }
        }
        let header = Header {
            config: self.config.clone(),
            vocab_sha256: self.vocab_sha256.clone(),
            lora: self.lora.as_ref().map(|l| l.config.clone()),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            meta: self.meta.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        out.write_all(&(payload.len() as u64).to_le_bytes())?;
        let mut bytes = Vec::with_capacity(payload.len() * 4);
        for v in payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        input.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        input.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut bytes = vec![0u8; count * 4];
        input.read_exact(&mut bytes)?;
        let payload: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();

        let mut params = ParamStore::new();
        let mut lora_params = ParamStore::new();
        let mut buffers = IndexMap::new();
        for e in header.tensors {
            let len: usize = e.shape.iter().product();
            let data = payload
                .get(e.offset..e.offset + len)
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {:?} extends past the payload", e.name)))?
                .to_vec();
            match e.group {
                Group::Param => params.insert(e.name, tensor(e.shape, data)?),
                Group::Lora => lora_params.insert(e.name, tensor(e.shape, data)?),
                Group::Optim => {
                    buffers.insert(e.name, data);
                }
            }
        }
        Ok(Checkpoint {
            config: header.config,
            vocab_sha256: header.vocab_sha256,
            params,
            lora: header.lora.map(|config| LoraSet { config, params: lora_params }),
            optimizer: header.optimizer_step.map(|step| OptimizerState { step, buffers }),
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn tensor(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor<f32>, CheckpointError> {
    Ok(Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?.with_grad())
}
