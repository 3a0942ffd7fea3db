//! Binary checkpoint container.
//!
//! ```text
//! "VSEGCKPT"            8 bytes
//! version               u32 little-endian
//! header length         u64 little-endian
//! header                UTF-8 JSON
//! payload               little-endian f32 values, tensors in index order
//! ```
//!
//! The header holds the model configuration, training progress, optional
//! optimizer settings and a tensor index of `{name, shape, offset, length}`
//! with byte offsets relative to the payload start. Batch-norm running
//! statistics are stored as `<layer>.running_mean` / `<layer>.running_var`,
//! optimizer moments as `optim.m.<param>` / `optim.v.<param>`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{OptState, Optimizer, OptimizerConfig};
use crate::tensor::{BatchNormState, Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"VSEGCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    config: OptimizerConfig,
    step: u64,
    mu_product: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: u64,
    val_history: Vec<f64>,
    optimizer: Option<OptimizerHeader>,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Optimizer>,
    pub epoch: u64,
    pub val_history: Vec<f64>,
}

struct Writer {
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: String, shape: Shape, data: &[f32]) {
        let offset = self.payload.len() as u64;
        for v in data {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(TensorEntry {
            name,
            shape: shape.0,
            offset,
            length: (data.len() * 4) as u64,
        });
    }
}

fn channel_shape(c: usize) -> Shape {
    Shape::new(c, 1, 1, 1)
}

/// Serializes a model and optional optimizer state.
pub fn encode(
    model: &Model,
    optimizer: Option<&Optimizer>,
    epoch: u64,
    val_history: &[f64],
) -> Result<Vec<u8>> {
    let mut w = Writer {
        entries: Vec::new(),
        payload: Vec::new(),
    };
    for (name, t) in model.param_names().iter().zip(model.params()) {
        w.push(name.clone(), t.shape(), t.data());
    }
    for (name, s) in model.state_names().iter().zip(model.bn_states()) {
        w.push(
            format!("{name}.running_mean"),
            channel_shape(s.mean.len()),
            &s.mean,
        );
        w.push(
            format!("{name}.running_var"),
            channel_shape(s.var.len()),
            &s.var,
        );
    }
    let opt_header = optimizer.map(|opt| {
        let names = model.param_names();
        for (name, t) in names.iter().zip(&opt.state.first) {
            w.push(format!("optim.m.{name}"), t.shape(), t.data());
        }
        for (name, t) in names.iter().zip(&opt.state.second) {
            w.push(format!("optim.v.{name}"), t.shape(), t.data());
        }
        OptimizerHeader {
            config: opt.config,
            step: opt.state.step,
            mu_product: opt.state.mu_product,
        }
    });
    let header = Header {
        config: model.config().clone(),
        epoch,
        val_history: val_history.to_vec(),
        optimizer: opt_header,
        tensors: w.entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + w.payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.payload);
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Parses a container produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing VSEGCKPT magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(20))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("header length exceeds file size"))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])
        .map_err(|e| bad(format!("header is not valid JSON: {e}")))?;
    let payload = &bytes[header_end..];

    let mut tensors: HashMap<&str, Tensor> = HashMap::new();
    for e in &header.tensors {
        let shape = Shape(e.shape);
        if e.length != (shape.numel() * 4) as u64 {
            return Err(bad(format!(
                "tensor {} length does not match its shape",
                e.name
            )));
        }
        let start = usize::try_from(e.offset).map_err(|_| bad("offset overflow"))?;
        let end = start
            .checked_add(e.length as usize)
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| bad(format!("tensor {} extends past the payload", e.name)))?;
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if tensors.insert(&e.name, Tensor::new(shape, data)?).is_some() {
            return Err(bad(format!("duplicate tensor {}", e.name)));
        }
    }

    let model = Model::from_parts(
        header.config.clone(),
        |name| tensors.get(name).cloned(),
        |name| {
            let mean = tensors.get(format!("{name}.running_mean").as_str())?;
            let var = tensors.get(format!("{name}.running_var").as_str())?;
            Some(BatchNormState {
                mean: mean.data().to_vec(),
                var: var.data().to_vec(),
            })
        },
    )?;

    let optimizer = match &header.optimizer {
        None => None,
        Some(h) => {
            let fetch = |prefix: &str| -> Result<Vec<Tensor>> {
                model
                    .param_names()
                    .iter()
                    .zip(model.params())
                    .map(|(name, p)| {
                        let t = tensors
                            .get(format!("{prefix}.{name}").as_str())
                            .ok_or_else(|| bad(format!("missing {prefix}.{name}")))?;
                        if t.shape() != p.shape() {
                            return Err(bad(format!("{prefix}.{name} has the wrong shape")));
                        }
                        Ok(t.clone())
                    })
                    .collect()
            };
            let first = fetch("optim.m")?;
            let second = if matches!(h.config, OptimizerConfig::Sgd(_)) {
                Vec::new()
            } else {
                fetch("optim.v")?
            };
            Some(Optimizer {
                config: h.config,
                state: OptState {
                    step: h.step,
                    mu_product: h.mu_product,
                    first,
                    second,
                },
            })
        }
    };
    Ok(Checkpoint {
        model,
        optimizer,
        epoch: header.epoch,
        val_history: header.val_history,
    })
}

pub fn save(
    path: &Path,
    model: &Model,
    optimizer: Option<&Optimizer>,
    epoch: u64,
    val_history: &[f64],
) -> Result<()> {
    let bytes = encode(model, optimizer, epoch, val_history)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// The tensor index of a container, without materializing the model.
pub fn index(bytes: &[u8]) -> Result<Vec<TensorEntry>> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing VSEGCKPT magic"));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("header length exceeds file size"))?;
    let header: Header = serde_json::from_slice(&bytes[20..end])
        .map_err(|e| bad(format!("header is not valid JSON: {e}")))?;
    Ok(header.tensors)
}
