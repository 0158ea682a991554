//! Binary checkpoint container.
//!
//! Layout: `DTSECKPT` magic, u32 LE format version, u64 LE header length,
//! UTF-8 JSON header, then raw little-endian tensor data. The header holds the
//! model config, a tensor table of `(name, shape, offset)` in elements, the
//! optimizer moments as two more table entries, the epoch counter and free
//! metadata. Files are written to a sibling temp path and renamed into place.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, TseModel};
use crate::error::{Error, Result};
use crate::nn::{Params, Real};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DTSECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Adam state, flattened in parameter visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub lr: f64,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: TseModel<T>,
    pub optimizer: Option<OptimizerState<T>>,
    pub epoch: usize,
    pub meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerEntry {
    step: u64,
    lr: f64,
    first_moment_offset: usize,
    second_moment_offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    dtype: String,
    model_config: ModelConfig,
    epoch: usize,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
    total_elements: usize,
    meta: serde_json::Value,
}

fn dtype_width(dtype: &str) -> Result<usize> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(Error::Schema(format!("unsupported dtype {other}"))),
    }
}

fn push_values<T: Real>(out: &mut Vec<u8>, values: &[T]) {
    for &v in values {
        match T::DTYPE {
            "f32" => out.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
            _ => out.extend_from_slice(&v.f64().to_le_bytes()),
        }
    }
}

pub fn save_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    for (name, t) in ckpt.model.named() {
        tensors.push(TensorEntry {
            name,
            shape: t.shape.clone(),
            offset,
        });
        push_values(&mut data, &t.data);
        offset += t.len();
    }
    let optimizer = ckpt.optimizer.as_ref().map(|o| {
        let entry = OptimizerEntry {
            step: o.step,
            lr: o.lr,
            first_moment_offset: offset,
            second_moment_offset: offset + o.first_moment.len(),
            len: o.first_moment.len(),
        };
        push_values(&mut data, &o.first_moment);
        push_values(&mut data, &o.second_moment);
        offset += 2 * o.first_moment.len();
        entry
    });
    let header = Header {
        schema_version: CHECKPOINT_VERSION,
        dtype: T::DTYPE.to_string(),
        model_config: ckpt.model.config,
        epoch: ckpt.epoch,
        tensors,
        optimizer,
        total_elements: offset,
        meta: ckpt.meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;

    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        f.write_all(&data)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Schema(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = 20 + header_len;
    if bytes.len() < body {
        return Err(Error::Schema("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[20..body])?;
    let width = dtype_width(&header.dtype)?;
    let data = &bytes[body..];
    if data.len() != header.total_elements * width {
        return Err(Error::Schema(format!(
            "checkpoint data holds {} bytes, header declares {} elements",
            data.len(),
            header.total_elements
        )));
    }
    let read = |offset: usize, len: usize| -> Vec<T> {
        data[offset * width..(offset + len) * width]
            .chunks_exact(width)
            .map(|c| match width {
                4 => T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
                _ => T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            })
            .collect()
    };

    let mut model = TseModel::<T>::new(header.model_config, 0)?;
    let mut table: std::collections::HashMap<&str, &TensorEntry> =
        header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut failure = None;
    model.visit_mut("", &mut |name, t| {
        match table.remove(name.as_str()) {
            Some(e) if e.shape == t.shape => t.data = read(e.offset, t.len()),
            Some(e) => {
                failure.get_or_insert(format!("{name}: shape {:?} vs {:?}", e.shape, t.shape));
            }
            None => {
                failure.get_or_insert(format!("missing tensor {name}"));
            }
        }
    });
    if let Some(msg) = failure {
        return Err(Error::Schema(msg));
    }
    if let Some(extra) = table.keys().next() {
        return Err(Error::Schema(format!("unexpected tensor {extra}")));
    }
    let optimizer = header.optimizer.as_ref().map(|o| OptimizerState {
        step: o.step,
        lr: o.lr,
        first_moment: read(o.first_moment_offset, o.len),
        second_moment: read(o.second_moment_offset, o.len),
    });
    Ok(Checkpoint {
        model,
        optimizer,
        epoch: header.epoch,
        meta: header.meta,
    })
}
