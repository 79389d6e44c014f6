//! Operation counting and the MAC/AC energy estimate.
//!
//! Synaptic ops whose input is a spike tensor count as ACs scaled by the
//! observed input spike rate; every other op counts as dense MACs. Totals
//! are summed over all time steps of one sequence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, LayerRecord, OpKind, Probe, SnnModel};
use crate::tensor::{Real, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConstants {
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        EnergyConstants {
            e_mac_pj: 4.6,
            e_ac_pj: 0.9,
        }
    }
}

/// Shape description of one layer for dense-op counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerShape {
    Conv { k: usize, cin: usize, cout: usize, h_out: usize, w_out: usize },
    Fc { n_in: usize, n_out: usize },
    Bn { elements: usize },
    Membrane { elements: usize },
    ResidualAdd { elements: usize },
    UpsampleBilinear { out_elements: usize },
    UpsampleNearest { out_elements: usize },
}

pub fn count_dense_ops(layer: LayerShape) -> u64 {
    let n = match layer {
        LayerShape::Conv { k, cin, cout, h_out, w_out } => k * k * cin * cout * h_out * w_out,
        LayerShape::Fc { n_in, n_out } => n_in * n_out,
        LayerShape::Bn { elements } => 2 * elements,
        LayerShape::Membrane { elements } | LayerShape::ResidualAdd { elements } => elements,
        LayerShape::UpsampleBilinear { out_elements } => 4 * out_elements,
        LayerShape::UpsampleNearest { .. } => 0,
    };
    n as u64
}

/// Accumulated counts of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub path: String,
    pub kind: OpKind,
    /// Dense ops summed over recorded steps.
    pub dense_ops: u64,
    pub steps: u64,
    /// Input spike rate per recorded step (empty for MAC layers).
    pub spike_rates: Vec<f64>,
    pub acs: f64,
    pub macs: f64,
}

impl LayerEnergy {
    pub fn mean_spike_rate(&self) -> Option<f64> {
        (!self.spike_rates.is_empty()).then(|| self.spike_rates.iter().sum::<f64>() / self.spike_rates.len() as f64)
    }
}

/// Per-layer op ledger. Implements [`Probe`] so it can be attached to a
/// model step directly.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub constants: EnergyConstants,
    pub layers: Vec<LayerEnergy>,
    /// Output spike rates of SN layers, one entry per step.
    pub neuron_rates: BTreeMap<String, Vec<f64>>,
    /// Number of completed model steps.
    pub steps: u64,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
    #[serde(skip)]
    error: Option<String>,
    /// All synaptic ops forced to dense MACs (ANN twin).
    #[serde(default)]
    pub dense_only: bool,
}

impl EnergyLedger {
    pub fn new(constants: EnergyConstants) -> Self {
        EnergyLedger {
            constants,
            ..Default::default()
        }
    }

    /// Ledger whose every op is a dense MAC at rate 1.
    pub fn dense(constants: EnergyConstants) -> Self {
        EnergyLedger {
            dense_only: true,
            ..Self::new(constants)
        }
    }

    /// A single synthetic row carrying externally supplied totals.
    pub fn from_totals(acs: f64, macs: f64, constants: EnergyConstants) -> Self {
        let mut l = Self::new(constants);
        l.layers.push(LayerEnergy {
            path: "injected".into(),
            kind: OpKind::Conv,
            dense_ops: (acs + macs).round() as u64,
            steps: 1,
            spike_rates: Vec::new(),
            acs,
            macs,
        });
        l
    }

    fn row(&mut self, path: &str, kind: OpKind) -> &mut LayerEnergy {
        let i = match self.index.get(path) {
            Some(&i) => i,
            None => {
                self.layers.push(LayerEnergy {
                    path: path.to_string(),
                    kind,
                    dense_ops: 0,
                    steps: 0,
                    spike_rates: Vec::new(),
                    acs: 0.0,
                    macs: 0.0,
                });
                self.index.insert(path.to_string(), self.layers.len() - 1);
                self.layers.len() - 1
            }
        };
        &mut self.layers[i]
    }

    /// Adds one step of `dense_ops`; `spike_rate` marks a spike-input op.
    pub fn record(&mut self, path: &str, kind: OpKind, dense_ops: u64, spike_rate: Option<f64>) -> Result<()> {
        if let Some(r) = spike_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("spike rate {r} outside [0, 1] at {path}")));
            }
        }
        let dense_only = self.dense_only;
        let row = self.row(path, kind);
        row.dense_ops += dense_ops;
        row.steps += 1;
        match spike_rate {
            Some(r) if !dense_only => {
                row.spike_rates.push(r);
                row.acs += dense_ops as f64 * r;
            }
            _ => row.macs += dense_ops as f64,
        }
        Ok(())
    }

    /// Records the output rate of an SN layer; spikes must be binary.
    pub fn record_spike_rate<R: Real>(&mut self, path: &str, spikes: &Tensor<R>) -> Result<f64> {
        if !spikes.is_binary() {
            return Err(Error::NotBinary(path.to_string()));
        }
        let rate = if spikes.is_empty() {
            0.0
        } else {
            spikes.count_nonzero() as f64 / spikes.len() as f64
        };
        self.neuron_rates.entry(path.to_string()).or_default().push(rate);
        Ok(rate)
    }

    /// Fails if any probe callback saw an invalid input.
    pub fn check(&self) -> Result<()> {
        match &self.error {
            Some(e) => Err(Error::NotBinary(e.clone())),
            None => Ok(()),
        }
    }

    pub fn ac_total(&self) -> f64 {
        self.layers.iter().map(|l| l.acs).sum()
    }

    pub fn mac_total(&self) -> f64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn dense_total(&self) -> u64 {
        self.layers.iter().map(|l| l.dense_ops).sum()
    }

    /// Multiplies every count by `factor` (e.g. T for a one-step trace, or
    /// 1/n to average n sequences).
    pub fn scaled(&self, factor: f64) -> EnergyLedger {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.dense_ops = (l.dense_ops as f64 * factor).round() as u64;
            l.acs *= factor;
            l.macs *= factor;
        }
        out
    }

    /// Scales every recorded input spike rate by `factor` (clamped to 1) and
    /// recomputes ACs.
    pub fn with_rates_scaled(&self, factor: f64) -> EnergyLedger {
        let mut out = self.clone();
        for l in &mut out.layers {
            if l.spike_rates.is_empty() {
                continue;
            }
            let per_step = l.dense_ops as f64 / l.steps as f64;
            l.spike_rates.iter_mut().for_each(|r| *r = (*r * factor).min(1.0));
            l.acs = l.spike_rates.iter().map(|r| per_step * r).sum();
        }
        out
    }

    /// Joules.
    pub fn total_energy(&self) -> f64 {
        total_energy(self.ac_total(), self.mac_total(), &self.constants)
    }
}

/// `E = ACs·E_AC + MACs·E_MAC` in joules, counts already summed over steps.
pub fn total_energy(acs: f64, macs: f64, c: &EnergyConstants) -> f64 {
    (acs * c.e_ac_pj + macs * c.e_mac_pj) * 1e-12
}

impl<R: Real> Probe<R> for EnergyLedger {
    fn layer(&mut self, rec: &LayerRecord<'_>) {
        if let Err(e) = self.record(rec.path, rec.kind, rec.dense_ops, rec.spike_rate) {
            self.error.get_or_insert(e.to_string());
        }
    }

    fn spikes(&mut self, path: &str, spikes: &Tensor<R>) {
        if let Err(e) = self.record_spike_rate(path, spikes) {
            self.error.get_or_insert(e.to_string());
        }
    }

    fn step_end(&mut self) {
        self.steps += 1;
    }
}

/// Ledger of the ReLU twin: the same layer graph with every op counted as a
/// dense MAC, over `time_steps` steps.
pub fn ann_twin_ledger(arch: &ArchConfig, constants: EnergyConstants) -> Result<EnergyLedger> {
    let mut model: SnnModel<f32> = SnnModel::new(arch.clone(), 0)?;
    let mut tape = Tape::inference();
    let x = Tensor::zeros(&[1, arch.in_channels, arch.in_h, arch.in_w]);
    let mut ledger = EnergyLedger::dense(constants);
    model.step(&mut tape, &x, Some(&mut ledger))?;
    ledger.check()?;
    let mut out = ledger.scaled(arch.time_steps as f64);
    out.steps = arch.time_steps as u64;
    for l in &mut out.layers {
        l.steps *= arch.time_steps as u64;
    }
    out.neuron_rates.clear();
    Ok(out)
}

/// One row of the SNN/ANN comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub input_resolution: [usize; 4],
    pub params_m: f64,
    pub ops_g: f64,
    pub acs_g: f64,
    pub macs_g: f64,
    pub energy_mj: f64,
}

impl TableRow {
    pub fn from_ledger(model: &str, arch: &ArchConfig, params: usize, ledger: &EnergyLedger) -> Self {
        TableRow {
            model: model.to_string(),
            input_resolution: [arch.time_steps, arch.in_channels, arch.in_h, arch.in_w],
            params_m: params as f64 / 1e6,
            ops_g: ledger.dense_total() as f64 / 1e9,
            acs_g: ledger.ac_total() / 1e9,
            macs_g: ledger.mac_total() / 1e9,
            energy_mj: ledger.total_energy() * 1e3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerReportRow {
    pub path: String,
    pub kind: OpKind,
    pub dense_ops: u64,
    pub mean_spike_rate: Option<f64>,
    pub acs: f64,
    pub macs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LedgerReport {
    pub layers: Vec<LayerReportRow>,
    pub ac_total: f64,
    pub mac_total: f64,
    pub dense_total: u64,
    pub energy_mj: f64,
}

impl From<&EnergyLedger> for LedgerReport {
    fn from(l: &EnergyLedger) -> Self {
        LedgerReport {
            layers: l
                .layers
                .iter()
                .map(|r| LayerReportRow {
                    path: r.path.clone(),
                    kind: r.kind,
                    dense_ops: r.dense_ops,
                    mean_spike_rate: r.mean_spike_rate(),
                    acs: r.acs,
                    macs: r.macs,
                })
                .collect(),
            ac_total: l.ac_total(),
            mac_total: l.mac_total(),
            dense_total: l.dense_total(),
            energy_mj: l.total_energy() * 1e3,
        }
    }
}

/// JSON energy report: both ledgers plus the comparison table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyReport {
    pub config_hash: String,
    pub constants: EnergyConstants,
    pub sequences: u64,
    pub snn: LedgerReport,
    pub ann: LedgerReport,
    pub table: Vec<TableRow>,
    pub neuron_spike_rates: BTreeMap<String, f64>,
}

impl EnergyReport {
    /// `snn` must already be averaged to one sequence.
    pub fn new(
        config_hash: String,
        arch: &ArchConfig,
        params: usize,
        snn: &EnergyLedger,
        ann: &EnergyLedger,
        sequences: u64,
    ) -> Self {
        EnergyReport {
            config_hash,
            constants: snn.constants,
            sequences,
            snn: snn.into(),
            ann: ann.into(),
            table: vec![
                TableRow::from_ledger("SNN", arch, params, snn),
                TableRow::from_ledger("ANN", arch, params, ann),
            ],
            neuron_spike_rates: snn
                .neuron_rates
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len().max(1) as f64))
                .collect(),
        }
    }
}
