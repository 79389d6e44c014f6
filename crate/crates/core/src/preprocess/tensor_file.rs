use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{put_f32s, put_string, Reader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SPT_MAGIC: &[u8; 8] = b"SPTENSOR";
pub const SPT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    /// Cells clamp at 1.
    #[default]
    Binary,
    /// Cells count events.
    Count,
}

/// Binned events `[T, 2, H, W]`; channel 0 is positive polarity.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTensor {
    pub data: Tensor<f32>,
    pub mode: BinMode,
    pub id: String,
    pub config_hash: u64,
}

impl SpikeTensor {
    pub fn dims(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn time_steps(&self) -> usize {
        self.data.shape()[0]
    }

    /// Slice `t` as a `[2, H, W]` tensor.
    pub fn step(&self, t: usize) -> Result<Tensor<f32>> {
        self.data.index_outer(t)
    }

    /// Layout: magic, u32 version, u32 T, C, H, W, u8 mode, u64 config hash,
    /// u32-prefixed id, then T·C·H·W f32 values, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SPT_MAGIC);
        out.extend_from_slice(&SPT_VERSION.to_le_bytes());
        for d in self.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(self.mode as u8);
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        put_string(&mut out, &self.id);
        put_f32s(&mut out, self.data.data());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(8)? != SPT_MAGIC {
            return Err(Error::format(path, "not a .spt file"));
        }
        let version = r.u32()?;
        if version != SPT_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let mode = match r.u8()? {
            0 => BinMode::Binary,
            1 => BinMode::Count,
            m => return Err(Error::format(path, format!("bad bin mode {m}"))),
        };
        let config_hash = r.u64()?;
        let id = r.string()?;
        let n = dims.iter().product();
        let data = r.f32s(n)?;
        if r.remaining() != 0 {
            return Err(Error::format(path, "trailing bytes"));
        }
        Ok(SpikeTensor {
            data: Tensor::new(dims.to_vec(), data)?,
            mode,
            id,
            config_hash,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
