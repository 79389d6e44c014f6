use std::fs;
use std::path::Path;

use crate::binio::{put_f32s, put_string, Reader};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, ModelParams, ParamKind, SnnModel};
use crate::tensor::Tensor;

use super::{AdamW, RunRecord, TrainConfig};

pub const CKPT_MAGIC: &[u8; 8] = b"SNNCKPT\0";
pub const CKPT_VERSION: u32 = 1;

/// Everything needed to resume a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Hash of the tensor set the model was trained on.
    pub data_hash: u64,
    pub params: ModelParams<f32>,
    pub opt: AdamW<f32>,
    pub record: RunRecord,
}

fn kind_code(k: ParamKind) -> u8 {
    match k {
        ParamKind::Weight => 0,
        ParamKind::Bias => 1,
        ParamKind::BnGamma => 2,
        ParamKind::BnBeta => 3,
        ParamKind::RunningMean => 4,
        ParamKind::RunningVar => 5,
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    put_f32s(out, t.data());
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor<f32>> {
    let rank = r.u32()? as usize;
    let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n = shape.iter().product();
    Tensor::new(shape, r.f32s(n)?)
}

impl Checkpoint {
    pub fn from_model(
        model: &SnnModel<f32>,
        train: &TrainConfig,
        data_hash: u64,
        opt: &AdamW<f32>,
        record: &RunRecord,
    ) -> Self {
        Checkpoint {
            arch: model.arch().clone(),
            train: train.clone(),
            data_hash,
            params: model.params().clone(),
            opt: opt.clone(),
            record: record.clone(),
        }
    }

    /// Layout: magic, u32 version, arch JSON, train JSON, u64 data hash,
    /// u32 entry count, per entry (path, u8 kind, tensor), u64 optimizer
    /// step, per entry u8 flag then m and v tensors, record JSON. Strings are
    /// u32-prefixed, numbers little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        put_string(&mut out, &serde_json::to_string(&self.arch)?);
        put_string(&mut out, &serde_json::to_string(&self.train)?);
        out.extend_from_slice(&self.data_hash.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for e in self.params.entries() {
            put_string(&mut out, &e.path);
            out.push(kind_code(e.kind));
            put_tensor(&mut out, &e.value);
        }
        out.extend_from_slice(&self.opt.t.to_le_bytes());
        for (m, v) in self.opt.m.iter().zip(&self.opt.v) {
            match (m, v) {
                (Some(m), Some(v)) => {
                    out.push(1);
                    put_tensor(&mut out, m);
                    put_tensor(&mut out, v);
                }
                _ => out.push(0),
            }
        }
        put_string(&mut out, &serde_json::to_string(&self.record)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(8)? != CKPT_MAGIC {
            return Err(Error::format(path, "not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let bad = |e: serde_json::Error| Error::format(path, e.to_string());
        let arch: ArchConfig = serde_json::from_str(&r.string()?).map_err(bad)?;
        let train: TrainConfig = serde_json::from_str(&r.string()?).map_err(bad)?;
        let data_hash = r.u64()?;
        let n = r.u32()? as usize;
        let mut params = ModelParams::new();
        for _ in 0..n {
            let p = r.string()?;
            let kind = match r.u8()? {
                0 => ParamKind::Weight,
                1 => ParamKind::Bias,
                2 => ParamKind::BnGamma,
                3 => ParamKind::BnBeta,
                4 => ParamKind::RunningMean,
                5 => ParamKind::RunningVar,
                k => return Err(Error::format(path, format!("bad parameter kind {k}"))),
            };
            params.add(p, kind, read_tensor(&mut r)?);
        }
        let t = r.u64()?;
        let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            if r.u8()? == 1 {
                m.push(Some(read_tensor(&mut r)?));
                v.push(Some(read_tensor(&mut r)?));
            } else {
                m.push(None);
                v.push(None);
            }
        }
        let record: RunRecord = serde_json::from_str(&r.string()?).map_err(bad)?;
        if r.remaining() != 0 {
            return Err(Error::format(path, "trailing bytes"));
        }
        params.check_finite()?;
        Ok(Checkpoint {
            opt: AdamW {
                cfg: train.optimizer,
                t,
                m,
                v,
            },
            arch,
            train,
            data_hash,
            params,
            record,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Rebuilds the model; fails with a config mismatch when `expected`
    /// differs from the stored architecture.
    pub fn into_model(&self, expected: Option<&ArchConfig>) -> Result<SnnModel<f32>> {
        if let Some(a) = expected {
            let (want, got) = (crate::config::hash_json(a)?, crate::config::hash_json(&self.arch)?);
            if want != got {
                return Err(Error::ConfigMismatch {
                    expected: want,
                    found: got,
                });
            }
        }
        SnnModel::from_params(self.arch.clone(), self.params.clone())
    }
}
