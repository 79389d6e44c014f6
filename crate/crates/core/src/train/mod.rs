//! Stepwise BPTT training, evaluation and checkpointing.

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use optim::{clip_grad_norm, grad_norm, AdamW, AdamWConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{self, LossWeights, SsimConfig};
use crate::model::SnnModel;
use crate::rng::derive_seed;
use crate::tensor::{Real, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossWeights,
    pub ssim: SsimConfig,
    pub track_weight: f64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamWConfig::default(),
            epochs: 50,
            batch_size: 4,
            seed: 0,
            loss: LossWeights::default(),
            ssim: SsimConfig::default(),
            track_weight: 1.0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sup_taps: usize) -> Result<()> {
        self.optimizer.validate()?;
        self.loss.validate(sup_taps)?;
        self.ssim.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if !(self.track_weight >= 0.0 && self.track_weight.is_finite()) {
            return Err(Error::InvalidConfig("track_weight must be finite and >= 0".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig("grad_clip must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// One training or evaluation sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<R: Real = f32> {
    pub id: String,
    /// `[T, 2, H, W]`.
    pub input: Tensor<R>,
    /// `[1, H, W]` in [0, 1].
    pub truth: Tensor<R>,
    /// `[T, 2]` normalized (x, y) per step.
    pub track: Tensor<R>,
}

impl<R: Real> TrainSample<R> {
    pub fn time_steps(&self) -> usize {
        self.input.shape()[0]
    }
}

struct Batch<R: Real> {
    steps: Vec<Tensor<R>>,
    tracks: Vec<Tensor<R>>,
    truth: Tensor<R>,
}

fn assemble<R: Real>(samples: &[&TrainSample<R>]) -> Result<Batch<R>> {
    let first = samples.first().ok_or(Error::Empty("batch"))?;
    let t_len = first.time_steps();
    let mut steps = Vec::with_capacity(t_len);
    let mut tracks = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let xs = samples.iter().map(|s| s.input.index_outer(t)).collect::<Result<Vec<_>>>()?;
        steps.push(Tensor::stack(&xs.iter().collect::<Vec<_>>())?);
        let ts = samples.iter().map(|s| s.track.index_outer(t)).collect::<Result<Vec<_>>>()?;
        tracks.push(Tensor::stack(&ts.iter().collect::<Vec<_>>())?);
    }
    let truth = Tensor::stack(&samples.iter().map(|s| &s.truth).collect::<Vec<_>>())?;
    Ok(Batch { steps, tracks, truth })
}

fn check_steps<R: Real>(model: &SnnModel<R>, samples: &[&TrainSample<R>]) -> Result<()> {
    let t = model.arch().time_steps;
    for s in samples {
        if s.time_steps() != t || s.track.shape() != [t, 2] {
            return Err(Error::dim(
                "train",
                "time",
                format!("sample {} has {} steps, model expects {t}", s.id, s.time_steps()),
            ));
        }
    }
    Ok(())
}

/// Summary of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Σ_t [SUP loss + track_weight · tracking MSE], batch mean.
    pub loss: f64,
    pub grad_norm: f64,
}

/// Forward over all steps, one backward through the unrolled sequence and
/// one optimizer update. States are reset before and after.
pub fn train_batch<R: Real>(
    model: &mut SnnModel<R>,
    opt: &mut AdamW<R>,
    samples: &[&TrainSample<R>],
    cfg: &TrainConfig,
) -> Result<StepStats> {
    check_steps(model, samples)?;
    let batch = assemble(samples)?;
    model.reset_states();
    let mut tape = Tape::train();
    let mut terms = Vec::with_capacity(2 * batch.steps.len());
    for (x, track) in batch.steps.iter().zip(&batch.tracks) {
        let out = model.step(&mut tape, x, None)?;
        let (l_sup, _) = loss::sup_loss_var(&mut tape, &out.sup, &batch.truth, &cfg.loss, &cfg.ssim)?;
        let l_track = loss::tracking_loss_var(&mut tape, out.track, track)?;
        terms.push((l_sup, R::one()));
        terms.push((l_track, R::lit(cfg.track_weight)));
    }
    let total = tape.affine(&terms, R::zero())?;
    let loss_value = tape.value(total).item().as_f64();
    let grads = tape.backward(total)?;
    let mut g = model.collect_grads(&grads);
    drop(grads);
    model.reset_states();
    let norm = match cfg.grad_clip {
        Some(max) => clip_grad_norm(&mut g, max),
        None => grad_norm(&g),
    };
    opt.step(model.params_mut(), &g)?;
    Ok(StepStats {
        loss: loss_value,
        grad_norm: norm,
    })
}

/// Per-step outputs of one sample during evaluation.
#[derive(Clone, Debug)]
pub struct StepView<'a, R: Real> {
    pub sample: usize,
    pub t: usize,
    /// `[1, H, W]`.
    pub recon_final: &'a Tensor<R>,
    pub recon_coarse: &'a Tensor<R>,
    pub track_pred: [f64; 2],
    pub track_true: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: String,
    pub ssim: f64,
    pub mse: f64,
    pub track_mse: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: Vec<SampleEval>,
    pub mean_ssim: f64,
    pub mean_mse: f64,
    pub mean_track_mse: f64,
    pub mean_loss: f64,
}

impl EvalSummary {
    pub fn from_rows(samples: Vec<SampleEval>) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = |f: fn(&SampleEval) -> f64| samples.iter().map(f).sum::<f64>() / n;
        EvalSummary {
            mean_ssim: mean(|s| s.ssim),
            mean_mse: mean(|s| s.mse),
            mean_track_mse: mean(|s| s.track_mse),
            mean_loss: mean(|s| s.loss),
            samples,
        }
    }
}

/// Inference over `samples`: reconstruction metrics at the final step,
/// tracking MSE over all steps, and the training objective per sample.
pub fn evaluate<R: Real>(
    model: &mut SnnModel<R>,
    samples: &[TrainSample<R>],
    cfg: &TrainConfig,
    mut hook: impl FnMut(&StepView<'_, R>),
) -> Result<EvalSummary> {
    let refs: Vec<&TrainSample<R>> = samples.iter().collect();
    check_steps(model, &refs)?;
    let mut rows = Vec::with_capacity(samples.len());
    for (chunk_idx, chunk) in refs.chunks(cfg.batch_size).enumerate() {
        let batch = assemble(chunk)?;
        model.reset_states();
        let mut tape = Tape::inference();
        let n = chunk.len();
        let mut loss_acc = vec![0.0; n];
        let mut track_acc = vec![0.0; n];
        let mut last = Vec::new();
        let t_len = batch.steps.len();
        for (t, (x, track)) in batch.steps.iter().zip(&batch.tracks).enumerate() {
            let out = model.step(&mut tape, x, None)?;
            let fin = tape.value(out.recon_final).clone();
            let coarse = tape.value(out.recon_coarse).clone();
            let pred = tape.value(out.track).clone();
            let sups: Vec<Tensor<R>> = out.sup.iter().map(|&v| tape.value(v).clone()).collect();
            for b in 0..n {
                let truth = chunk[b].truth.clone();
                let maps = sups.iter().map(|m| m.index_outer(b)).collect::<Result<Vec<_>>>()?;
                let l_sup = loss::sup_loss(&maps.iter().collect::<Vec<_>>(), &truth, &cfg.loss, &cfg.ssim)?;
                let p = pred.index_outer(b)?;
                let tt = track.index_outer(b)?;
                let l_track = loss::tracking_loss(&p, &tt)?;
                loss_acc[b] += l_sup + cfg.track_weight * l_track;
                track_acc[b] += l_track;
                let (rf, rc) = (fin.index_outer(b)?, coarse.index_outer(b)?);
                hook(&StepView {
                    sample: chunk_idx * cfg.batch_size + b,
                    t,
                    recon_final: &rf,
                    recon_coarse: &rc,
                    track_pred: [p.data()[0].as_f64(), p.data()[1].as_f64()],
                    track_true: [tt.data()[0].as_f64(), tt.data()[1].as_f64()],
                });
            }
            if t + 1 == t_len {
                last = (0..n).map(|b| fin.index_outer(b)).collect::<Result<Vec<_>>>()?;
            }
        }
        model.reset_states();
        for b in 0..n {
            let m = loss::eval_metrics(&last[b], &chunk[b].truth, &cfg.ssim)?;
            rows.push(SampleEval {
                id: chunk[b].id.clone(),
                ssim: m.ssim,
                mse: m.mse,
                track_mse: track_acc[b] / t_len as f64,
                loss: loss_acc[b],
            });
        }
    }
    Ok(EvalSummary::from_rows(rows))
}

/// Per-epoch record; deterministic under a fixed seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_ssim: f64,
    pub test_mse: f64,
    pub test_track_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<String>,
}

/// Sample order of `epoch` (1-based), a pure function of seed and epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
    idx.shuffle(&mut rng);
    idx
}

/// Optimizer and run history of one training run.
pub struct Trainer<R: Real = f32> {
    pub cfg: TrainConfig,
    pub opt: AdamW<R>,
    pub record: RunRecord,
}

impl<R: Real> Trainer<R> {
    pub fn new(cfg: TrainConfig, model: &SnnModel<R>, config_hash: String) -> Result<Self> {
        cfg.validate(model.arch().sup_taps.len())?;
        Ok(Trainer {
            opt: AdamW::new(cfg.optimizer, model.params()),
            cfg,
            record: RunRecord {
                config_hash,
                ..Default::default()
            },
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.record.epochs.len()
    }

    /// Trains one epoch over `train` and evaluates on `test`.
    pub fn run_epoch(
        &mut self,
        model: &mut SnnModel<R>,
        train: &[TrainSample<R>],
        test: &[TrainSample<R>],
    ) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let epoch = self.epochs_done() + 1;
        let order = epoch_order(self.cfg.seed, epoch, train.len());
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&TrainSample<R>> = chunk.iter().map(|&i| &train[i]).collect();
            let stats = train_batch(model, &mut self.opt, &batch, &self.cfg)?;
            loss_sum += stats.loss * batch.len() as f64;
        }
        let eval = if test.is_empty() {
            EvalSummary::from_rows(Vec::new())
        } else {
            evaluate(model, test, &self.cfg, |_| {})?
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            test_loss: eval.mean_loss,
            test_ssim: eval.mean_ssim,
            test_mse: eval.mean_mse,
            test_track_mse: eval.mean_track_mse,
        };
        self.record.epochs.push(rec.clone());
        Ok(rec)
    }
}
