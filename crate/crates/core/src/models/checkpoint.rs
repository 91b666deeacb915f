//! Checkpoint file: `"HFN1"`, u32 version, u64 header length, JSON header,
//! then every tensor as little-endian f32 in table order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchId, BuildOptions, InputSpec, Model};
use crate::cohort::{Modality, Task};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HFN1";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub task: Option<Task>,
    /// Input modality of a single-modality model.
    pub modality: Option<Modality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    arch: ArchId,
    width: f64,
    input: InputSpec,
    dropout_p: f64,
    tensors: Vec<TensorEntry>,
    metadata: CheckpointMeta,
}

pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

pub fn checkpoint_bytes(model: &Model, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (_, p) in model.store().iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
            trainable: p.trainable,
        });
        offset += 4 * p.value.len() as u64;
    }
    let header = Header {
        arch: model.arch(),
        width: model.width(),
        input: model.input(),
        dropout_p: model.dropout_p(),
        tensors,
        metadata: meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.store().iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREAMBLE {
        return Err(Error::Corrupt(format!("checkpoint is only {} bytes", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rest = &bytes[PREAMBLE..];
    if hlen > rest.len() as u64 {
        return Err(Error::Corrupt(format!(
            "header length {hlen} exceeds the {} remaining bytes",
            rest.len()
        )));
    }
    let (json, payload) = rest.split_at(hlen as usize);
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let mut expected = 0u64;
    for t in &header.tensors {
        if t.offset != expected {
            return Err(Error::Corrupt(format!(
                "tensor {} at offset {} (expected {expected})",
                t.name, t.offset
            )));
        }
        expected += 4 * t.shape.iter().product::<usize>() as u64;
    }
    if expected != payload.len() as u64 {
        return Err(Error::Corrupt(format!(
            "payload is {} bytes, tensor table needs {expected}",
            payload.len()
        )));
    }

    let opts = BuildOptions {
        dropout_p: header.dropout_p,
        seed: 0,
    };
    let mut model = Model::build(header.arch, header.width, header.input.grid, opts)?;
    if model.input() != header.input || model.store().len() != header.tensors.len() {
        return Err(Error::Corrupt("tensor table does not match the architecture".into()));
    }
    for t in &header.tensors {
        let id = model
            .store()
            .id(&t.name)
            .ok_or_else(|| Error::Corrupt(format!("unknown tensor {}", t.name)))?;
        let start = t.offset as usize;
        let n: usize = t.shape.iter().product();
        let data: Vec<f32> = payload[start..start + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let p = model.store_mut().get_mut(id);
        if p.value.shape() != t.shape.as_slice() || p.trainable != t.trainable {
            return Err(Error::Corrupt(format!(
                "tensor {} has shape {:?}, expected {:?}",
                t.name,
                t.shape,
                p.value.shape()
            )));
        }
        p.value = Tensor::from_vec(&t.shape, data)?;
    }
    Ok(Checkpoint {
        model,
        meta: header.metadata,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
