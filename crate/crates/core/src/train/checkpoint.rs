//! VXCK checkpoint files.
//!
//! Layout (little-endian): magic `VXCK`, `u32` version, `u64` manifest length,
//! manifest (`key=value` lines; `model.*` keys hold the model configuration,
//! everything else is free-form metadata), `u32` tensor count, then per tensor
//! `u16` name length, name bytes, `u8` rank, `u64` dims, `f32` values.

use std::path::Path;

use crate::container::{decode_header, encode_header, put_f32s, Cursor};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"VXCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    /// Non-`model.*` manifest entries, in file order.
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>) -> Self {
        Checkpoint {
            params,
            metadata: Vec::new(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces a metadata entry.
    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.metadata.push((key.to_string(), value)),
        }
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    if let Some((k, _)) = ckpt.metadata.iter().find(|(k, _)| k.starts_with("model.")) {
        return Err(Error::Config(format!("metadata key {k:?} collides with the model namespace")));
    }
    let mut entries = ckpt.config().to_entries();
    entries.extend(ckpt.metadata.iter().cloned());
    let mut out = encode_header(MAGIC, VERSION, &entries);
    let specs = ckpt.params.layout().specs();
    out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
    for spec in specs {
        out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.push(spec.shape.len() as u8);
        for &dim in &spec.shape {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        put_f32s(&mut out, &ckpt.params.as_slice()[spec.range()]);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let header = decode_header(bytes, MAGIC, "checkpoint")?;
    if header.version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", header.version)));
    }
    let (model, metadata): (Vec<_>, Vec<_>) = header
        .entries
        .into_iter()
        .partition(|(k, _)| k.starts_with("model."));
    let config = ModelConfig::from_entries(&model)?;
    let mut params = ModelParams::<f32>::zeros(&config)?;

    let mut cur = Cursor::new(header.payload);
    let count = u32::from_le_bytes(cur.take(4, "tensor count")?.try_into().unwrap()) as usize;
    let specs = params.layout().specs().to_vec();
    if count != specs.len() {
        return Err(Error::Integrity(format!(
            "checkpoint holds {count} tensors but its config needs {}",
            specs.len()
        )));
    }
    for spec in &specs {
        let name_len = cur.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if name != spec.name {
            return Err(Error::Integrity(format!("expected tensor {:?}, found {name:?}", spec.name)));
        }
        let rank = cur.u8("tensor rank")? as usize;
        let dims = (0..rank)
            .map(|_| cur.u64("tensor dim").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != spec.shape {
            return Err(Error::Integrity(format!(
                "tensor {name} has shape {dims:?} but the config implies {:?}",
                spec.shape
            )));
        }
        let values = cur.f32s(spec.len(), name)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!("tensor {name} holds non-finite values")));
        }
        params.as_mut_slice()[spec.range()].copy_from_slice(&values);
    }
    if cur.remaining() != 0 {
        return Err(Error::Integrity(format!("{} trailing bytes after the last tensor", cur.remaining())));
    }
    Ok(Checkpoint { params, metadata })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
