use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    /// Batch-norm running mean (buffer, not learnable).
    RunningMean,
    /// Batch-norm running variance (buffer, not learnable).
    RunningVar,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<R = f32> {
    pub path: String,
    pub kind: ParamKind,
    pub value: Tensor<R>,
}

/// Every parameter and buffer of a model, in creation order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams<R = f32> {
    entries: Vec<ParamEntry<R>>,
}

impl<R: Real> ModelParams<R> {
    pub fn new() -> Self {
        ModelParams { entries: Vec::new() }
    }

    pub fn add(&mut self, path: impl Into<String>, kind: ParamKind, value: Tensor<R>) -> ParamId {
        self.entries.push(ParamEntry {
            path: path.into(),
            kind,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<R>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<R> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, path: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.path == path).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn learnable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.entries[id.0].kind.learnable())
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind.learnable())
            .map(|e| e.value.len())
            .sum()
    }

    /// Disjoint mutable access to two entries.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor<R>, &mut Tensor<R>) {
        assert_ne!(a, b, "pair_mut needs distinct ids");
        if a.0 < b.0 {
            let (lo, hi) = self.entries.split_at_mut(b.0);
            (&mut lo[a.0].value, &mut hi[0].value)
        } else {
            let (lo, hi) = self.entries.split_at_mut(a.0);
            (&mut hi[0].value, &mut lo[b.0].value)
        }
    }

    pub fn cast<S: Real>(&self) -> ModelParams<S> {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    path: e.path.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                })
                .collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.value.is_finite()) {
            Some(e) => Err(Error::NonFinite(format!("parameter {}", e.path))),
            None => Ok(()),
        }
    }

    /// Replaces values from another set with identical paths and shapes.
    pub fn copy_from(&mut self, other: &ModelParams<R>) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::dim("copy_from", "entries", format!("{} vs {}", other.len(), self.len())));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.path != src.path || dst.value.shape() != src.value.shape() {
                return Err(Error::dim("copy_from", "entry", format!("{} vs {}", dst.path, src.path)));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// Deterministic Kaiming-normal initializer (std = √(2 / fan_in)).
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn kaiming<R: Real>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<R> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| R::lit(normal.sample(&mut self.rng)))
    }
}
