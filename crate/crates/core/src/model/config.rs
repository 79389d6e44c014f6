use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{LifConfig, SynapseFilterConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Bilinear,
    /// Learnable 2×2 stride-2 transposed convolution.
    Transposed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SkipFusion {
    /// `US(y) + skip`.
    #[default]
    Add,
    /// Channel concatenation `[US(y), skip]`.
    Concat,
}

/// Supervision point of the reconstruction branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupTap {
    Bottleneck,
    /// Decoder stage 1..=n; stage n is the ORM output map.
    Dec(usize),
    RrmOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub in_h: usize,
    pub in_w: usize,
    pub in_channels: usize,
    pub time_steps: usize,
    pub kernel_size: usize,
    /// Encoder widths, shared by the OTM encoding path and the ORM encoder.
    pub enc_channels: Vec<usize>,
    /// OTM fully connected widths; the last entry must be 2.
    pub otm_fc_dims: Vec<usize>,
    pub rrm_channels: Vec<usize>,
    pub sup_taps: Vec<SupTap>,
    pub upsample_mode: UpsampleMode,
    pub skip_fusion: SkipFusion,
    pub lif: LifConfig,
    pub synapse_filter: SynapseFilterConfig,
    pub bn_eps: f32,
    pub bn_momentum: f32,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ArchConfig {
    /// Desk-scale default at 64×64.
    pub fn toy() -> Self {
        ArchConfig {
            in_h: 64,
            in_w: 64,
            in_channels: 2,
            time_steps: 18,
            kernel_size: 3,
            enc_channels: vec![16, 32, 64],
            otm_fc_dims: vec![256, 64, 2],
            rrm_channels: vec![8, 16, 32],
            sup_taps: Self::default_taps(3),
            upsample_mode: UpsampleMode::Nearest,
            skip_fusion: SkipFusion::Add,
            lif: LifConfig::default(),
            synapse_filter: SynapseFilterConfig::default(),
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Wider preset whose parameter count is close to 3.7 M.
    pub fn paper_scale() -> Self {
        ArchConfig {
            enc_channels: vec![32, 64, 128, 224],
            otm_fc_dims: vec![330, 128, 2],
            rrm_channels: vec![16, 32, 64],
            sup_taps: Self::default_taps(4),
            ..Self::toy()
        }
    }

    /// Small configuration for gradient checks and unit tests.
    pub fn tiny() -> Self {
        ArchConfig {
            in_h: 16,
            in_w: 16,
            time_steps: 2,
            enc_channels: vec![4, 8],
            otm_fc_dims: vec![16, 2],
            rrm_channels: vec![2, 4, 4],
            sup_taps: Self::default_taps(2),
            ..Self::toy()
        }
    }

    /// Bottleneck, every decoder stage and the RRM output.
    pub fn default_taps(levels: usize) -> Vec<SupTap> {
        let mut taps = vec![SupTap::Bottleneck];
        taps.extend((1..=levels).map(SupTap::Dec));
        taps.push(SupTap::RrmOut);
        taps
    }

    pub fn levels(&self) -> usize {
        self.enc_channels.len()
    }

    /// Output widths of ORM decoder stages 1..=n.
    pub fn dec_channels(&self) -> Vec<usize> {
        let n = self.levels();
        (1..=n)
            .map(|j| if j < n { self.enc_channels[n - j - 1] } else { self.enc_channels[0] })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.lif.validate()?;
        self.synapse_filter.validate()?;
        if self.enc_channels.is_empty() || self.enc_channels.contains(&0) {
            return bad("enc_channels must be non-empty and positive".into());
        }
        if self.rrm_channels.is_empty() || self.rrm_channels.contains(&0) {
            return bad("rrm_channels must be non-empty and positive".into());
        }
        let depth = self.levels().max(self.rrm_channels.len());
        let div = 1usize << depth;
        if self.in_h == 0 || self.in_w == 0 || self.in_h % div != 0 || self.in_w % div != 0 {
            return bad(format!("input {}x{} must be divisible by {div}", self.in_h, self.in_w));
        }
        if self.in_channels == 0 || self.time_steps == 0 {
            return bad("in_channels and time_steps must be >= 1".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad("kernel_size must be odd".into());
        }
        if self.otm_fc_dims.last() != Some(&2) || self.otm_fc_dims.contains(&0) {
            return bad("otm_fc_dims must end with 2".into());
        }
        if self.sup_taps.is_empty() {
            return bad("at least one sup tap is required".into());
        }
        for t in &self.sup_taps {
            if let SupTap::Dec(j) = t {
                if *j == 0 || *j > self.levels() {
                    return bad(format!("sup tap dec_{j} outside 1..={}", self.levels()));
                }
            }
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be > 0 and bn_momentum in [0, 1]".into());
        }
        Ok(())
    }
}
