//! Named-tensor container.
//!
//! Layout: the magic bytes `VIPR1`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then every tensor's values as little-endian `f32`
//! in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{NetConfig, Scalar, Tensor, Viprnet};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"VIPR1";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    /// Precision the weights were trained in (`f32` or `f64`).
    pub precision: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn from_net<T: Scalar>(net: &Viprnet<T>, meta: CheckpointMeta) -> Self {
        let tensors = net
            .config
            .param_specs()
            .into_iter()
            .zip(&net.params)
            .map(|((name, shape), t)| NamedTensor {
                name,
                shape,
                values: t.values.iter().map(|v| v.f64() as f32).collect(),
            })
            .collect();
        Self {
            config: net.config.clone(),
            meta,
            tensors,
        }
    }

    /// Checks that every parameter of the config is present with its
    /// declared shape.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for (name, shape) in self.config.param_specs() {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::shape(format!("tensor {name}"), "missing"))?;
            if t.shape != shape {
                return Err(Error::shape(format!("{name} {shape:?}"), &t.shape));
            }
            if t.values.len() != shape.iter().product::<usize>() {
                return Err(Error::shape(shape, t.values.len()));
            }
        }
        Ok(())
    }

    pub fn to_net<T: Scalar>(&self) -> Result<Viprnet<T>> {
        self.validate()?;
        let params = self
            .config
            .param_specs()
            .into_iter()
            .map(|(name, shape)| {
                let t = self.tensors.iter().find(|t| t.name == name).expect("validated");
                Tensor::new(shape, t.values.iter().map(|&v| T::of(f64::from(v))).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Viprnet {
            config: self.config.clone(),
            params,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    dtype: "f32".into(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::CheckpointHeader(e.to_string()))?;
        let len = u32::try_from(json.len()).map_err(|_| Error::CheckpointHeader("header too large".into()))?;
        let payload: usize = self.tensors.iter().map(|t| t.values.len() * 4).sum();
        let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 4 + json.len() + payload);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        let rest = &bytes[CHECKPOINT_MAGIC.len()..];
        if rest.len() < 4 {
            return Err(Error::Truncated("header length".into()));
        }
        let len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        let rest = &rest[4..];
        if rest.len() < len {
            return Err(Error::Truncated(format!("header needs {len} bytes, {} present", rest.len())));
        }
        let header: Header =
            serde_json::from_slice(&rest[..len]).map_err(|e| Error::CheckpointHeader(e.to_string()))?;
        let mut payload = &rest[len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::CheckpointHeader(format!("dtype {:?} of {}", entry.dtype, entry.name)));
            }
            let n: usize = entry.shape.iter().product();
            if payload.len() < n * 4 {
                return Err(Error::Truncated(format!(
                    "{} declares {n} values, {} bytes remain",
                    entry.name,
                    payload.len()
                )));
            }
            let values = payload[..n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            payload = &payload[n * 4..];
            tensors.push(NamedTensor {
                name: entry.name,
                shape: entry.shape,
                values,
            });
        }
        if !payload.is_empty() {
            return Err(Error::Truncated(format!("{} trailing bytes after declared tensors", payload.len())));
        }
        let ckpt = Self {
            config: header.config,
            meta: header.meta,
            tensors,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
