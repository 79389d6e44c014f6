use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Real, Tensor};

/// Decoupled-weight-decay Adam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0 and eps > 0".into()));
        }
        Ok(())
    }
}

/// Moment state, one slot per parameter entry (`None` for buffers).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<R: Real = f32> {
    pub cfg: AdamWConfig,
    pub t: u64,
    pub m: Vec<Option<Tensor<R>>>,
    pub v: Vec<Option<Tensor<R>>>,
}

impl<R: Real> AdamW<R> {
    pub fn new(cfg: AdamWConfig, params: &ModelParams<R>) -> Self {
        let slots = |_: ()| -> Vec<Option<Tensor<R>>> {
            params
                .entries()
                .iter()
                .map(|e| e.kind.learnable().then(|| Tensor::zeros(e.value.shape())))
                .collect()
        };
        AdamW {
            cfg,
            t: 0,
            m: slots(()),
            v: slots(()),
        }
    }

    /// `p ← p − lr·m̂/(√v̂ + eps) − lr·wd·p`. Gradients are indexed like the
    /// parameter entries; a non-finite gradient aborts before any update.
    pub fn step(&mut self, params: &mut ModelParams<R>, grads: &[Option<Tensor<R>>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::CountMismatch {
                what: "optimizer gradient slots",
                expected: params.len(),
                found: grads.len(),
            });
        }
        for (e, g) in params.entries().iter().zip(grads) {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}", e.path)));
                }
                if g.shape() != e.value.shape() {
                    return Err(Error::dim("adamw", "grad", format!("{}: {:?}", e.path, g.shape())));
                }
            }
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (Some(g), Some(m), Some(v)) = (&grads[i], &mut self.m[i], &mut self.v[i]) else {
                continue;
            };
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k].as_f64();
                let mk = c.beta1 * m.data()[k].as_f64() + (1.0 - c.beta1) * gk;
                let vk = c.beta2 * v.data()[k].as_f64() + (1.0 - c.beta2) * gk * gk;
                m.data_mut()[k] = R::lit(mk);
                v.data_mut()[k] = R::lit(vk);
                let pk = p[k].as_f64();
                let step = (mk / bc1) / ((vk / bc2).sqrt() + c.eps);
                p[k] = R::lit(pk - c.lr * step - c.lr * c.weight_decay * pk);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm<R: Real>(grads: &[Option<Tensor<R>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<R: Real>(grads: &mut [Option<Tensor<R>>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v = R::lit(v.as_f64() * s));
        }
    }
    norm
}
