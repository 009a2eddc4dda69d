//! Binary checkpoint: model config header plus named little-endian arrays.
//!
//! Layout: magic `HSIM`, u16 version, u32 header length, JSON
//! [`ModelConfig`], u32 array count, then per array: u16 name length, UTF-8
//! name, u8 dtype tag, u8 rank, u32 extents, raw values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HSIM";
pub const VERSION: u16 = 1;

/// One stored array, kept as raw bytes until cast to a concrete dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayRecord {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl ArrayRecord {
    fn from_tensor<T: Real>(name: &str, t: &Tensor<T>) -> Self {
        Self {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes: T::to_le_bytes_vec(t.data()),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Values converted to `T`; bit-exact when the stored dtype is `T`.
    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let size = self.dtype.size();
        let data: Vec<T> = match self.dtype {
            d if d == T::DTYPE => self.bytes.chunks_exact(size).map(T::from_le_chunk).collect(),
            DType::F32 => self
                .bytes
                .chunks_exact(size)
                .map(|c| T::from_f64(f32::from_le_chunk(c) as f64))
                .collect(),
            DType::F64 => self
                .bytes
                .chunks_exact(size)
                .map(|c| T::from_f64(f64::from_le_chunk(c)))
                .collect(),
        };
        Tensor::new(&self.shape, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub arrays: Vec<ArrayRecord>,
}

impl Checkpoint {
    pub fn from_params<T: Real>(config: &ModelConfig, params: &ModelParams<T>) -> Self {
        Self {
            config: config.clone(),
            arrays: params
                .entries()
                .iter()
                .map(|(n, t)| ArrayRecord::from_tensor(n, t))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.arrays.iter().map(ArrayRecord::numel).sum()
    }

    /// Rebuilds parameters, checking every name and shape against the config.
    pub fn to_params<T: Real>(&self) -> Result<ModelParams<T>> {
        let mut params = ModelParams::<T>::init(&self.config)?;
        let mut slots = params.entries_mut();
        if slots.len() != self.arrays.len() {
            return Err(Error::format(format!(
                "checkpoint has {} arrays, config expects {}",
                self.arrays.len(),
                slots.len()
            )));
        }
        for ((name, slot), rec) in slots.iter_mut().zip(&self.arrays) {
            if *name != rec.name || slot.shape() != rec.shape.as_slice() {
                return Err(Error::format(format!(
                    "array '{}' {:?} does not match expected '{name}' {:?}",
                    rec.name,
                    rec.shape,
                    slot.shape()
                )));
            }
            **slot = rec.to_tensor()?;
        }
        Ok(params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.config)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.dtype.tag());
            out.push(a.shape.len() as u8);
            for &d in &a.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&a.bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("bad checkpoint magic"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(header_len)?)?;
        config.validate()?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::format("array name is not UTF-8"))?;
            let tag = r.u8()?;
            let dtype =
                DType::from_tag(tag).ok_or_else(|| Error::format(format!("dtype tag {tag}")))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let bytes = r.take(numel * dtype.size())?.to_vec();
            arrays.push(ArrayRecord {
                name,
                dtype,
                shape,
                bytes,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { config, arrays })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    params: &ModelParams<T>,
) -> Result<()> {
    fs::write(path, Checkpoint::from_params(config, params).to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig::tiny();
        let params = ModelParams::<f32>::init(&cfg).unwrap();
        let ck = Checkpoint::from_params(&cfg, &params);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_params::<f32>().unwrap(), params);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let cfg = ModelConfig::tiny();
        let params = ModelParams::<f64>::init(&cfg).unwrap();
        let bytes = Checkpoint::from_params(&cfg, &params).to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
    }
}
