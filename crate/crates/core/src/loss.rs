//! Reconstruction and tracking losses plus evaluation metrics.
//!
//! Maps are tensors whose last two axes are (H, W); every leading index is
//! a separate plane and per-plane values are averaged. Values and
//! gradients are computed in f64 and recorded on the tape as fused scalar
//! nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sup_weights: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            a: 1.0,
            b: 1.0,
            c: 1.0,
            sup_weights: vec![1.0; 5],
        }
    }
}

impl LossWeights {
    pub fn validate(&self, taps: usize) -> Result<()> {
        let terms = [self.a, self.b, self.c];
        if terms.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || terms.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig("loss weights a, b, c must be >= 0 with a positive sum".into()));
        }
        if self.sup_weights.len() != taps {
            return Err(Error::CountMismatch {
                what: "sup weights vs sup taps",
                expected: taps,
                found: self.sup_weights.len(),
            });
        }
        if self.sup_weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("sup weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            c1: 1e-4,
            c2: 9e-4,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::InvalidConfig(format!("ssim window {} must be odd", self.window)));
        }
        if !(self.sigma > 0.0 && self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::InvalidConfig("ssim sigma, c1, c2 must be > 0".into()));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let mut g: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= s);
        g
    }
}

/// Component values of one hybrid loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HybridParts {
    pub bce: f64,
    pub ssim: f64,
    pub iou_loss: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub ssim: f64,
    pub mse: f64,
}

fn planes<R: Real>(op: &'static str, pred: &Tensor<R>, target: &Tensor<R>) -> Result<(usize, usize, usize)> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(op, "shape", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let s = pred.shape();
    if s.len() < 2 || pred.is_empty() {
        return Err(Error::dim(op, "rank", format!("need (..., H, W), got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    Ok((pred.len() / (h * w), h, w))
}

fn f64s<R: Real>(t: &Tensor<R>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

/// Mean binary cross-entropy with `pred` clamped to `[ε, 1−ε]`.
pub fn bce_grad<R: Real>(pred: &Tensor<R>, target: &Tensor<R>) -> Result<(f64, Vec<f64>)> {
    planes("bce", pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (i, (p, g)) in pred.data().iter().zip(target.data()).enumerate() {
        let (p, g) = (p.as_f64(), g.as_f64());
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
        if p == pc {
            grad[i] = (pc - g) / (pc * (1.0 - pc)) / n;
        }
    }
    Ok((loss / n, grad))
}

pub fn bce<R: Real>(pred: &Tensor<R>, target: &Tensor<R>) -> Result<f64> {
    Ok(bce_grad(pred, target)?.0)
}

/// Valid separable correlation of one plane with taps `g`.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..k).map(|i| g[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..k).map(|i| g[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(m: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let v = m[oy * ow + ox];
            for i in 0..k {
                rows[(oy + i) * ow + ox] += g[i] * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for ox in 0..ow {
            let v = rows[y * ow + ox];
            for i in 0..k {
                out[y * w + ox + i] += g[i] * v;
            }
        }
    }
    out
}

/// SSIM of one plane and its gradient with respect to `x`.
fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, g: &[f64], cfg: &SsimConfig) -> (f64, Vec<f64>) {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, g);
    let my = filter_valid(y, h, w, g);
    let exx = filter_valid(&sq(x, x), h, w, g);
    let eyy = filter_valid(&sq(y, y), h, w, g);
    let exy = filter_valid(&sq(x, y), h, w, g);
    let n = mx.len();
    let (mut da, mut db, mut dc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cxy = exy[i] - ux * uy;
        let a1 = 2.0 * ux * uy + cfg.c1;
        let a2 = 2.0 * cxy + cfg.c2;
        let b1 = ux * ux + uy * uy + cfg.c1;
        let b2 = vx + vy + cfg.c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        let d_cxy = 2.0 * a1 / (b1 * b2);
        let d_vx = -s / b2;
        let d_ux = 2.0 * uy * a2 / (b1 * b2) - 2.0 * ux * s / b1 - uy * d_cxy - 2.0 * ux * d_vx;
        da[i] = d_ux / n as f64;
        db[i] = d_vx / n as f64;
        dc[i] = d_cxy / n as f64;
    }
    let ga = filter_valid_adjoint(&da, h, w, g);
    let gb = filter_valid_adjoint(&db, h, w, g);
    let gc = filter_valid_adjoint(&dc, h, w, g);
    let grad = (0..h * w).map(|k| ga[k] + 2.0 * x[k] * gb[k] + y[k] * gc[k]).collect();
    (total / n as f64, grad)
}

/// Mean SSIM over planes and its gradient with respect to `pred`.
pub fn ssim_grad<R: Real>(pred: &Tensor<R>, target: &Tensor<R>, cfg: &SsimConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let (np, h, w) = planes("ssim", pred, target)?;
    if h < cfg.window || w < cfg.window {
        return Err(Error::dim("ssim", "H/W", format!("{h}x{w} smaller than window {}", cfg.window)));
    }
    let g = cfg.taps();
    let (x, y) = (f64s(pred), f64s(target));
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(x.len());
    for p in 0..np {
        let r = p * h * w..(p + 1) * h * w;
        let (s, gr) = ssim_plane(&x[r.clone()], &y[r], h, w, &g, cfg);
        total += s;
        grad.extend(gr.into_iter().map(|v| v / np as f64));
    }
    Ok((total / np as f64, grad))
}

pub fn ssim<R: Real>(pred: &Tensor<R>, target: &Tensor<R>, cfg: &SsimConfig) -> Result<f64> {
    Ok(ssim_grad(pred, target, cfg)?.0)
}

/// Soft IoU loss `1 − Σpg / (Σp + Σg − Σpg)`, 0 when both maps are empty.
pub fn iou_loss_grad<R: Real>(pred: &Tensor<R>, target: &Tensor<R>) -> Result<(f64, Vec<f64>)> {
    let (np, h, w) = planes("iou_loss", pred, target)?;
    let (x, y) = (f64s(pred), f64s(target));
    let m = h * w;
    let mut total = 0.0;
    let mut grad = vec![0.0; x.len()];
    for p in 0..np {
        let (xs, ys) = (&x[p * m..(p + 1) * m], &y[p * m..(p + 1) * m]);
        let inter: f64 = xs.iter().zip(ys).map(|(a, b)| a * b).sum();
        let union = xs.iter().sum::<f64>() + ys.iter().sum::<f64>() - inter;
        if union == 0.0 {
            continue;
        }
        total += 1.0 - inter / union;
        for k in 0..m {
            let g = ys[k];
            grad[p * m + k] = -(g * union - inter * (1.0 - g)) / (union * union) / np as f64;
        }
    }
    Ok((total / np as f64, grad))
}

pub fn iou_loss<R: Real>(pred: &Tensor<R>, target: &Tensor<R>) -> Result<f64> {
    Ok(iou_loss_grad(pred, target)?.0)
}

/// `a·BCE + b·(1 − SSIM) + c·IoU` and its gradient.
pub fn hybrid_loss_grad<R: Real>(
    pred: &Tensor<R>,
    target: &Tensor<R>,
    w: &LossWeights,
    cfg: &SsimConfig,
) -> Result<(HybridParts, Vec<f64>)> {
    let (bce, gb) = bce_grad(pred, target)?;
    let (ssim, gs) = ssim_grad(pred, target, cfg)?;
    let (iou, gi) = iou_loss_grad(pred, target)?;
    let total = w.a * bce + w.b * (1.0 - ssim) + w.c * iou;
    let grad = (0..gb.len()).map(|k| w.a * gb[k] - w.b * gs[k] + w.c * gi[k]).collect();
    Ok((
        HybridParts {
            bce,
            ssim,
            iou_loss: iou,
            total,
        },
        grad,
    ))
}

pub fn hybrid_loss<R: Real>(pred: &Tensor<R>, target: &Tensor<R>, w: &LossWeights, cfg: &SsimConfig) -> Result<f64> {
    Ok(hybrid_loss_grad(pred, target, w, cfg)?.0.total)
}

/// Weighted sum of hybrid losses over SUP maps.
pub fn sup_loss<R: Real>(maps: &[&Tensor<R>], target: &Tensor<R>, w: &LossWeights, cfg: &SsimConfig) -> Result<f64> {
    check_taps(maps.len(), w)?;
    let mut total = 0.0;
    for (m, &sw) in maps.iter().zip(&w.sup_weights) {
        if sw != 0.0 {
            total += sw * hybrid_loss(m, target, w, cfg)?;
        }
    }
    Ok(total)
}

fn check_taps(n: usize, w: &LossWeights) -> Result<()> {
    if n != w.sup_weights.len() {
        return Err(Error::CountMismatch {
            what: "sup maps vs sup weights",
            expected: w.sup_weights.len(),
            found: n,
        });
    }
    Ok(())
}

/// Mean squared coordinate error.
pub fn tracking_loss_grad<R: Real>(pred: &Tensor<R>, truth: &Tensor<R>) -> Result<(f64, Vec<f64>)> {
    if pred.shape() != truth.shape() || pred.is_empty() {
        return Err(Error::dim("tracking_loss", "shape", format!("{:?} vs {:?}", pred.shape(), truth.shape())));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| {
            let d = p.as_f64() - t.as_f64();
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

pub fn tracking_loss<R: Real>(pred: &Tensor<R>, truth: &Tensor<R>) -> Result<f64> {
    Ok(tracking_loss_grad(pred, truth)?.0)
}

/// Pixel MSE between two maps.
pub fn mse<R: Real>(pred: &Tensor<R>, target: &Tensor<R>) -> Result<f64> {
    planes("mse", pred, target)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum();
    Ok(s / pred.len() as f64)
}

pub fn eval_metrics<R: Real>(recon: &Tensor<R>, truth: &Tensor<R>, cfg: &SsimConfig) -> Result<EvalMetrics> {
    Ok(EvalMetrics {
        ssim: ssim(recon, truth, cfg)?,
        mse: mse(recon, truth)?,
    })
}

fn fused<R: Real>(tape: &mut Tape<R>, input: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
    if !value.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    tape.fused_scalar(input, R::lit(value), grad.into_iter().map(R::lit).collect())
}

/// Hybrid loss recorded on the tape.
pub fn hybrid_loss_var<R: Real>(
    tape: &mut Tape<R>,
    pred: Var,
    target: &Tensor<R>,
    w: &LossWeights,
    cfg: &SsimConfig,
) -> Result<(Var, HybridParts)> {
    let (parts, grad) = hybrid_loss_grad(tape.value(pred), target, w, cfg)?;
    Ok((fused(tape, pred, parts.total, grad)?, parts))
}

/// SUP aggregation recorded on the tape; returns the loss and the parts of
/// every tap.
pub fn sup_loss_var<R: Real>(
    tape: &mut Tape<R>,
    maps: &[Var],
    target: &Tensor<R>,
    w: &LossWeights,
    cfg: &SsimConfig,
) -> Result<(Var, Vec<HybridParts>)> {
    check_taps(maps.len(), w)?;
    let mut terms = Vec::with_capacity(maps.len());
    let mut parts = Vec::with_capacity(maps.len());
    for (&m, &sw) in maps.iter().zip(&w.sup_weights) {
        let (v, p) = hybrid_loss_var(tape, m, target, w, cfg)?;
        terms.push((v, R::lit(sw)));
        parts.push(p);
    }
    Ok((tape.affine(&terms, R::zero())?, parts))
}

pub fn tracking_loss_var<R: Real>(tape: &mut Tape<R>, pred: Var, truth: &Tensor<R>) -> Result<Var> {
    let (v, g) = tracking_loss_grad(tape.value(pred), truth)?;
    fused(tape, pred, v, g)
}
