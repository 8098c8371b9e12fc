//! Binary checkpoint format.
//!
//! ```text
//! magic       8 bytes  "PADCKPT1"
//! config_len  u32 LE
//! config      config_len bytes of UTF-8 JSON (ModelConfig)
//! records     until end of file, each:
//!   name_len  u32 LE, then name bytes (UTF-8)
//!   dtype     u8       0 = f32, 1 = f64
//!   rank      u8
//!   dims      rank x u32 LE
//!   data      product(dims) little-endian elements
//! ```
//!
//! Records appear in canonical parameter order. Loading rebuilds the
//! parameter layout from the stored config and checks every record against
//! it by name and shape.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Result};
use crate::model::{build_model, Autoencoder, ModelConfig};
use crate::params::ParamTree;
use crate::tensor::{Element, Rng, Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"PADCKPT1";

pub fn encode<T: Element>(model: &Autoencoder<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let config = serde_json::to_vec(&model.config)?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    for (name, t) in model.params.named() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE_CODE);
        let dims = t.shape().dims();
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.reserve(t.numel() * T::BYTES);
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, context: impl FnOnce() -> String) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated { context: context() })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, context: impl FnOnce() -> String) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self, context: impl FnOnce() -> String) -> Result<u8, CheckpointError> {
        Ok(self.take(1, context)?[0])
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Autoencoder<T>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        let found = bytes[..bytes.len().min(MAGIC.len())].to_vec();
        return Err(CheckpointError::BadMagic { found }.into());
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let config_len = r.u32(|| "config length".into())? as usize;
    let config = r.take(config_len, || "config block".into())?;
    let config = std::str::from_utf8(config).map_err(|_| CheckpointError::Utf8("config block".into()))?;
    let config: ModelConfig = serde_json::from_str(config).map_err(|e| CheckpointError::Config(e.to_string()))?;
    config.validate().map_err(|e| CheckpointError::Config(e.to_string()))?;

    let mut stored: HashMap<String, Tensor<T>> = HashMap::new();
    while !r.done() {
        let name_len = r.u32(|| "record name length".into())? as usize;
        let name = r.take(name_len, || "record name".into())?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| CheckpointError::Utf8("record name".into()))?;
        let dtype = r.u8(|| format!("{name} dtype"))?;
        if dtype != T::DTYPE_CODE {
            return Err(CheckpointError::DtypeMismatch { name, found: dtype, expected: T::DTYPE_CODE }.into());
        }
        let rank = r.u8(|| format!("{name} rank"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(|| format!("{name} dims"))? as usize);
        }
        let count: usize = dims.iter().product();
        let raw = r.take(count.saturating_mul(T::BYTES), || format!("{name} data"))?;
        let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let shape = match dims[..] {
            [n, c, h, w] if count > 0 => Shape::new(n, c, h, w),
            _ => {
                return Err(CheckpointError::ShapeMismatch { name, found: dims, expected: vec![0; 4] }.into());
            }
        };
        let tensor = Tensor::new(shape, data).expect("length checked");
        if stored.insert(name.clone(), tensor).is_some() {
            return Err(CheckpointError::UnknownParameter(format!("{name} (duplicate)")).into());
        }
    }

    // Initialisation is only used for the layout; every slot is overwritten.
    let mut model: Autoencoder<T> = build_model(&config, &mut Rng::new(0))?;
    for (name, slot) in model.params.named_mut() {
        let t = stored.remove(&name).ok_or_else(|| CheckpointError::MissingParameter(name.clone()))?;
        if t.shape() != slot.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: t.shape().dims().to_vec(),
                expected: slot.shape().dims().to_vec(),
            }
            .into());
        }
        *slot = t;
    }
    if let Some(name) = stored.into_keys().min() {
        return Err(CheckpointError::UnknownParameter(name).into());
    }
    Ok(model)
}

pub fn save_checkpoint<T: Element>(model: &Autoencoder<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<Autoencoder<T>> {
    decode(&fs::read(path)?)
}
