//! Leaky integrate-and-fire dynamics, the ATan surrogate and the stateful
//! synapse filter.
//!
//! Membrane update per step, measured relative to `v_rest`:
//! `v' = v_rest + β·(v − v_rest) + I`, evaluated as `(1−β)·v_rest + β·v + I`.
//! A neuron fires when `v' − V_th ≥ 0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::tensor::ResetRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    #[default]
    HardToRest,
    Subtract,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    Spikes,
    Membrane,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifConfig {
    pub beta: f32,
    pub v_threshold: f32,
    pub v_rest: f32,
    pub reset: ResetPolicy,
    pub surrogate_alpha: f32,
    pub readout: Readout,
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            beta: 0.9,
            v_threshold: 1.0,
            v_rest: 0.0,
            reset: ResetPolicy::HardToRest,
            surrogate_alpha: 2.0,
            readout: Readout::Spikes,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidConfig(format!("lif beta {} not in (0, 1]", self.beta)));
        }
        if !(self.v_threshold > 0.0 && self.v_threshold > self.v_rest) {
            return Err(Error::InvalidConfig(format!(
                "lif v_threshold {} must be > 0 and > v_rest {}",
                self.v_threshold, self.v_rest
            )));
        }
        if !(self.surrogate_alpha > 0.0) {
            return Err(Error::InvalidConfig("lif surrogate_alpha must be > 0".into()));
        }
        Ok(())
    }

    pub fn with_readout(mut self, readout: Readout) -> Self {
        self.readout = readout;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynapseFilterConfig {
    pub decay: f32,
}

impl Default for SynapseFilterConfig {
    fn default() -> Self {
        SynapseFilterConfig { decay: 0.5 }
    }
}

impl SynapseFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "synapse filter decay {} not in (0, 1)",
                self.decay
            )));
        }
        Ok(())
    }
}

/// ATan sigmoid `σ(x) = atan(π/2·a·x)/π + 1/2`.
pub fn surrogate<R: Real>(x: R, alpha: R) -> R {
    let half_pi = R::lit(PI / 2.0);
    (half_pi * alpha * x).atan() / R::lit(PI) + R::lit(0.5)
}

/// `σ'(x) = (a/2) / (1 + (π/2·a·x)²)`.
pub fn surrogate_grad<R: Real>(x: R, alpha: R) -> R {
    let z = R::lit(PI / 2.0) * alpha * x;
    alpha / R::lit(2.0) / (R::one() + z * z)
}

/// Elementwise [`surrogate_grad`].
pub fn surrogate_grad_tensor<R: Real>(x: &Tensor<R>, alpha: R) -> Tensor<R> {
    x.map(|v| surrogate_grad(v, alpha))
}

/// Per-layer recurrent state. `None` means "at rest": membrane `v_rest`,
/// filter 0.
#[derive(Clone, Debug, Default)]
pub struct LifState {
    pub v: Option<Var>,
    pub filter: Option<Var>,
}

impl LifState {
    pub fn reset(&mut self) {
        self.v = None;
        self.filter = None;
    }

    pub fn is_rest(&self) -> bool {
        self.v.is_none() && self.filter.is_none()
    }

    /// Membrane values, or `None` when the layer sits at `v_rest`.
    pub fn membrane<'t, R: Real>(&self, tape: &'t Tape<R>) -> Option<&'t Tensor<R>> {
        self.v.map(|v| tape.value(v))
    }
}

/// Result of one LIF step.
#[derive(Clone, Copy, Debug)]
pub struct LifOutput {
    /// Binary spikes (`None` for membrane-readout layers, which never fire).
    pub spikes: Option<Var>,
    /// Membrane after integration, before any reset.
    pub v_pre: Var,
}

/// One LIF update on the tape.
pub fn lif_step<R: Real>(
    tape: &mut Tape<R>,
    state: &mut LifState,
    current: Var,
    cfg: &LifConfig,
) -> Result<LifOutput> {
    if !tape.value(current).is_finite() {
        return Err(Error::NonFinite("lif_step input current".into()));
    }
    let beta = R::lit(cfg.beta as f64);
    let v_rest = R::lit(cfg.v_rest as f64);
    let shape = tape.shape(current).to_vec();
    let v_prev = match state.v {
        Some(v) => {
            if !tape.owns(v) {
                return Err(Error::StaleState);
            }
            if tape.shape(v) != shape.as_slice() {
                return Err(Error::dim("lif_step", "state", format!("membrane {:?} vs input {:?}", tape.shape(v), shape)));
            }
            v
        }
        None => tape.constant(Tensor::full(&shape, v_rest)),
    };
    let bias = (R::one() - beta) * v_rest;
    let v_pre = tape.affine(&[(v_prev, beta), (current, R::one())], bias)?;
    if cfg.readout == Readout::Membrane {
        state.v = Some(v_pre);
        return Ok(LifOutput { spikes: None, v_pre });
    }
    let threshold = R::lit(cfg.v_threshold as f64);
    let spikes = tape.spike(v_pre, threshold, R::lit(cfg.surrogate_alpha as f64))?;
    let rule = match cfg.reset {
        ResetPolicy::HardToRest => ResetRule::Hard { v_rest },
        ResetPolicy::Subtract => ResetRule::Subtract { threshold },
    };
    state.v = Some(tape.reset(v_pre, spikes, rule)?);
    Ok(LifOutput {
        spikes: Some(spikes),
        v_pre,
    })
}

/// `f' = decay·f + x`; the output is `f'`.
pub fn synapse_filter_step<R: Real>(
    tape: &mut Tape<R>,
    state: &mut Option<Var>,
    input: Var,
    decay: R,
) -> Result<Var> {
    let out = match *state {
        Some(f) => {
            if !tape.owns(f) {
                return Err(Error::StaleState);
            }
            tape.affine(&[(f, decay), (input, R::one())], R::zero())?
        }
        None => input,
    };
    *state = Some(out);
    Ok(out)
}
