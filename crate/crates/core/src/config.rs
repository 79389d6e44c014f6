//! Unified run configuration and content hashes.
//!
//! Each pipeline stage stamps its artifacts with the hash of the inputs
//! that determine them: the dataset hash covers the seed, sample count and
//! simulator; the tensor hash adds preprocessing; the architecture hash
//! covers the network only.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::EnergyConstants;
use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::preprocess::{InsectEyeConfig, PreprocessConfig};
use crate::sim::SimConfig;
use crate::train::TrainConfig;

/// First 8 bytes (little-endian) of SHA-256 over the compact JSON form.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> Result<u64> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes")))
}

pub fn hex(hash: u64) -> String {
    format!("{hash:016x}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub tensor_dir: PathBuf,
    pub run_dir: PathBuf,
    pub eval_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "out/data".into(),
            tensor_dir: "out/tensors".into(),
            run_dir: "out/run".into(),
            eval_dir: "out/eval".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub samples: usize,
    /// Fraction of samples (taken from the end of the manifest) held out.
    pub test_fraction: f64,
    pub sim: SimConfig,
    pub preprocess: PreprocessConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub energy: EnergyConstants,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = ArchConfig::toy();
        let sim = SimConfig::default();
        let base = PreprocessConfig::default();
        // Smallest eye field that fits the full sensor into the network input.
        let field = (sim.sensor_width as usize)
            .div_ceil(arch.in_w)
            .max((sim.sensor_height as usize).div_ceil(arch.in_h));
        RunConfig {
            seed: 0,
            samples: 200,
            test_fraction: 0.2,
            sim,
            preprocess: PreprocessConfig {
                insect_eye: InsectEyeConfig { field, ..base.insect_eye },
                bin_count: arch.time_steps,
                out_h: arch.in_h,
                out_w: arch.in_w,
                ..base
            },
            arch,
            train: TrainConfig::default(),
            energy: EnergyConstants::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Checks every section and the couplings between them.
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.preprocess.validate(self.sim.sensor_width, self.sim.sensor_height)?;
        self.arch.validate()?;
        self.train.validate(self.arch.sup_taps.len())?;
        if self.preprocess.bin_count != self.arch.time_steps {
            return Err(Error::InvalidConfig(format!(
                "preprocess.bin_count {} must equal arch.time_steps {}",
                self.preprocess.bin_count, self.arch.time_steps
            )));
        }
        if (self.preprocess.out_h, self.preprocess.out_w) != (self.arch.in_h, self.arch.in_w) {
            return Err(Error::InvalidConfig(format!(
                "preprocess output {}x{} must equal arch input {}x{}",
                self.preprocess.out_h, self.preprocess.out_w, self.arch.in_h, self.arch.in_w
            )));
        }
        if self.arch.in_channels != 2 {
            return Err(Error::InvalidConfig("arch.in_channels must be 2 (event polarities)".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidConfig("test_fraction must lie in [0, 1)".into()));
        }
        if !(self.energy.e_ac_pj >= 0.0 && self.energy.e_mac_pj >= 0.0) {
            return Err(Error::InvalidConfig("energy constants must be >= 0".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Run identity. Output paths and the epoch bound are excluded so that
    /// relocated reruns and resumed runs keep the same hash.
    pub fn hash(&self) -> Result<u64> {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        c.train.epochs = 0;
        hash_json(&c)
    }

    pub fn data_hash(&self) -> Result<u64> {
        hash_json(&(self.seed, self.samples, &self.sim))
    }

    pub fn tensor_hash(&self) -> Result<u64> {
        hash_json(&(self.data_hash()?, &self.preprocess))
    }

    pub fn arch_hash(&self) -> Result<u64> {
        hash_json(&self.arch)
    }

    /// Number of held-out samples out of `n`.
    pub fn test_count(&self, n: usize) -> usize {
        ((n as f64) * self.test_fraction).round() as usize
    }
}
