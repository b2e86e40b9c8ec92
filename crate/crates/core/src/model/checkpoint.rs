//! Binary checkpoint: magic, version, JSON header, little-endian f32 blob.
//!
//! ```text
//! "DBDHCKPT" | u32 version | u64 header length | header JSON | params | buffers
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dbdh, ModelConfig};
use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::nn::{Module, Real};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DBDHCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub config_hash: String,
    pub filter_bank: FilterBank,
    pub param_count: usize,
    pub buffer_count: usize,
    pub dtype: String,
    /// Free-form training metadata (epoch, validation IoU, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<f32>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &mut Dbdh<T>, meta: serde_json::Value) -> Self {
        let mut values = Vec::new();
        model.visit_params(&mut |p| values.extend(p.value.iter().map(|v| v.f64() as f32)));
        let param_count = values.len();
        model.visit_buffers(&mut |b| values.extend(b.iter().map(|v| v.f64() as f32)));
        Self {
            header: CheckpointHeader {
                config: model.config.clone(),
                config_hash: model.config.hash(),
                filter_bank: model.bank.clone(),
                param_count,
                buffer_count: values.len() - param_count,
                dtype: "f32".into(),
                meta,
            },
            values,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(20 + header.len() + 4 * self.values.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if header.config.hash() != header.config_hash {
            return Err(bad("header config hash does not match embedded config"));
        }
        let blob = &bytes[20 + hlen..];
        let count = header.param_count + header.buffer_count;
        if blob.len() != 4 * count {
            return Err(Error::Checkpoint(format!(
                "weight blob has {} bytes, expected {}",
                blob.len(),
                4 * count
            )));
        }
        let values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(Self { header, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Rebuilds the model. With `expected`, a checkpoint trained for a
    /// different architecture is refused.
    pub fn into_model<T: Real>(&self, expected: Option<&ModelConfig>) -> Result<Dbdh<T>> {
        if let Some(cfg) = expected {
            if cfg.hash() != self.header.config_hash {
                return Err(Error::Checkpoint(format!(
                    "config hash mismatch: checkpoint {} vs requested {}",
                    self.header.config_hash,
                    cfg.hash()
                )));
            }
        }
        let mut model = Dbdh::<T>::with_bank(self.header.config.clone(), self.header.filter_bank.clone(), 0)?;
        let mut pos = 0;
        let mut fail = None;
        let vals = &self.values;
        model.visit_params(&mut |p| {
            let end = pos + p.len();
            match vals.get(pos..end) {
                Some(src) => p.value.iter_mut().zip(src).for_each(|(d, &s)| *d = T::c(s as f64)),
                None => fail = Some(end),
            }
            pos = end;
        });
        if pos != self.header.param_count || fail.is_some() {
            return Err(Error::Checkpoint(format!(
                "parameter count {} does not match architecture ({pos})",
                self.header.param_count
            )));
        }
        model.visit_buffers(&mut |b| {
            let end = pos + b.len();
            match vals.get(pos..end) {
                Some(src) => b.iter_mut().zip(src).for_each(|(d, &s)| *d = T::c(s as f64)),
                None => fail = Some(end),
            }
            pos = end;
        });
        if pos != vals.len() || fail.is_some() {
            return Err(Error::Checkpoint("buffer count does not match architecture".into()));
        }
        Ok(model)
    }
}
