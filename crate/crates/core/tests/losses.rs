mod common;

use common::{rel_err, rng, uniform};
use neuroscatter::loss::*;
use neuroscatter::tensor::{Tape, Tensor};
use neuroscatter::Error;
use proptest::prelude::*;
use rand::Rng;

fn binary(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
}

/// Straightforward per-window SSIM with 2-D Gaussian weights over valid
/// window positions.
fn ssim_reference(x: &Tensor<f64>, y: &Tensor<f64>, cfg: &SsimConfig) -> f64 {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let k = cfg.window;
    let r = (k / 2) as f64;
    let g1: Vec<f64> = (0..k).map(|i| (-(i as f64 - r).powi(2) / (2.0 * cfg.sigma * cfg.sigma)).exp()).collect();
    let norm: f64 = g1.iter().sum::<f64>().powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for plane in 0..x.len() / (h * w) {
        let xp = &x.data()[plane * h * w..(plane + 1) * h * w];
        let yp = &y.data()[plane * h * w..(plane + 1) * h * w];
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = g1[i] * g1[j] / norm;
                        let (a, b) = (xp[(oy + i) * w + ox + j], yp[(oy + i) * w + ox + j]);
                        mx += wt * a;
                        my += wt * b;
                        xx += wt * a * a;
                        yy += wt * b * b;
                        xy += wt * a * b;
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += ((2.0 * mx * my + cfg.c1) * (2.0 * cxy + cfg.c2))
                    / ((mx * mx + my * my + cfg.c1) * (vx + vy + cfg.c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn bce_calibration() {
    let mut r = rng(1);
    let g = binary(&mut r, &[1, 16, 16]);
    let half = Tensor::full(&[1, 16, 16], 0.5);
    assert!((bce(&half, &g).unwrap() - std::f64::consts::LN_2).abs() < 1e-6);
    let perfect = g.map(|v| if v == 1.0 { 1.0 - BCE_EPS } else { BCE_EPS });
    assert!(bce(&perfect, &g).unwrap() < 1e-6);
}

#[test]
fn bce_gradient_at_half() {
    let g = Tensor::full(&[1, 4, 4], 1.0);
    let (_, grad) = bce_grad(&Tensor::full(&[1, 4, 4], 0.5), &g).unwrap();
    assert!(grad.iter().all(|&v| (v + 2.0 / 16.0).abs() < 1e-12));
}

#[test]
fn ssim_identity_constant_and_symmetry() {
    let cfg = SsimConfig::default();
    let mut r = rng(2);
    let x = uniform(&mut r, &[2, 16, 16], 0.0, 1.0);
    assert!((ssim(&x, &x, &cfg).unwrap() - 1.0).abs() < 1e-6);
    let (zero, one) = (Tensor::zeros(&[1, 16, 16]), Tensor::full(&[1, 16, 16], 1.0));
    let want = cfg.c1 / (1.0 + cfg.c1);
    assert!((ssim(&zero, &one, &cfg).unwrap() - want).abs() < 1e-12);
    let y = uniform(&mut r, &[2, 16, 16], 0.0, 1.0);
    assert!((ssim(&x, &y, &cfg).unwrap() - ssim(&y, &x, &cfg).unwrap()).abs() < 1e-12);
}

#[test]
fn ssim_rejects_small_maps() {
    let t = Tensor::<f64>::zeros(&[1, 8, 8]);
    assert!(ssim(&t, &t, &SsimConfig::default()).is_err());
}

#[test]
fn ssim_matches_reference_on_random_pairs() {
    let cfg = SsimConfig::default();
    let mut r = rng(3);
    for _ in 0..10 {
        let x = uniform(&mut r, &[1, 20, 24], 0.0, 1.0);
        let noise = uniform(&mut r, &[1, 20, 24], -0.3, 0.3);
        let y = Tensor::from_fn(&[1, 20, 24], |i| (x.data()[i] + noise.data()[i]).clamp(0.0, 1.0));
        let got = ssim(&x, &y, &cfg).unwrap();
        assert!((got - ssim_reference(&x, &y, &cfg)).abs() < 1e-5);
    }
}

#[test]
fn iou_cases() {
    let mut r = rng(4);
    let g = binary(&mut r, &[1, 8, 8]);
    assert_eq!(iou_loss(&g, &g).unwrap(), 0.0);
    let inv = g.map(|v| 1.0 - v);
    assert_eq!(iou_loss(&inv, &g).unwrap(), 1.0);
    let z = Tensor::<f64>::zeros(&[1, 8, 8]);
    assert_eq!(iou_loss(&z, &z).unwrap(), 0.0);
    let halfp = g.map(|v| 0.5 * v);
    assert!((iou_loss(&halfp, &g).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn hybrid_degenerate_weights_and_perfect_prediction() {
    let cfg = SsimConfig::default();
    let mut r = rng(5);
    let p = uniform(&mut r, &[1, 16, 16], 0.05, 0.95);
    let g = binary(&mut r, &[1, 16, 16]);
    let only_bce = LossWeights { a: 1.0, b: 0.0, c: 0.0, ..LossWeights::default() };
    assert_eq!(hybrid_loss(&p, &g, &only_bce, &cfg).unwrap(), bce(&p, &g).unwrap());
    let perfect = g.map(|v| if v == 1.0 { 1.0 - BCE_EPS } else { BCE_EPS });
    assert!(hybrid_loss(&perfect, &g, &LossWeights::default(), &cfg).unwrap() < 1e-5);
}

#[test]
fn hybrid_is_linear_in_weights() {
    let cfg = SsimConfig::default();
    let mut r = rng(6);
    let p = uniform(&mut r, &[1, 16, 16], 0.01, 0.99);
    let g = binary(&mut r, &[1, 16, 16]);
    let (b, s, i) = (bce(&p, &g).unwrap(), ssim(&p, &g, &cfg).unwrap(), iou_loss(&p, &g).unwrap());
    for _ in 0..20 {
        let w = LossWeights { a: r.random_range(0.0..3.0), b: r.random_range(0.0..3.0), c: r.random_range(0.0..3.0), ..LossWeights::default() };
        let want = w.a * b + w.b * (1.0 - s) + w.c * i;
        assert!((hybrid_loss(&p, &g, &w, &cfg).unwrap() - want).abs() < 1e-6);
    }
}

#[test]
fn sup_aggregation() {
    let cfg = SsimConfig::default();
    let mut r = rng(7);
    let p = uniform(&mut r, &[1, 16, 16], 0.01, 0.99);
    let g = binary(&mut r, &[1, 16, 16]);
    let single = hybrid_loss(&p, &g, &LossWeights::default(), &cfg).unwrap();
    let one = LossWeights { sup_weights: vec![1.0], ..LossWeights::default() };
    assert_eq!(sup_loss(&[&p], &g, &one, &cfg).unwrap(), single);
    let two = LossWeights { sup_weights: vec![1.0, 1.0], ..LossWeights::default() };
    assert!((sup_loss(&[&p, &p], &g, &two, &cfg).unwrap() - 2.0 * single).abs() < 1e-12);
    let zeros = LossWeights { sup_weights: vec![0.0, 0.0], ..LossWeights::default() };
    assert_eq!(sup_loss(&[&p, &p], &g, &zeros, &cfg).unwrap(), 0.0);
    let err = sup_loss(&[&p], &g, &two, &cfg).unwrap_err();
    assert!(matches!(err, Error::CountMismatch { expected: 2, found: 1, .. }));
}

#[test]
fn tracking_cases() {
    let z = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
    let o = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    assert_eq!(tracking_loss(&z, &z).unwrap(), 0.0);
    assert_eq!(tracking_loss(&z, &o).unwrap(), 1.0);
    let mut r = rng(8);
    let (a, b) = (uniform(&mut r, &[3, 2], 0.0, 1.0), uniform(&mut r, &[3, 2], 0.0, 1.0));
    assert_eq!(tracking_loss(&a, &b).unwrap(), tracking_loss(&b, &a).unwrap());
}

#[test]
fn eval_metric_cases() {
    let cfg = SsimConfig::default();
    let mut r = rng(9);
    let truth = uniform(&mut r, &[1, 16, 16], 0.0, 0.9);
    let m = eval_metrics(&truth, &truth, &cfg).unwrap();
    assert!((m.ssim - 1.0).abs() < 1e-12 && m.mse == 0.0);
    let shifted = truth.map(|v| v + 0.1);
    assert!((eval_metrics(&shifted, &truth, &cfg).unwrap().mse - 0.01).abs() < 1e-12);
    assert_eq!(eval_metrics(&shifted, &truth, &cfg).unwrap(), eval_metrics(&shifted, &truth, &cfg).unwrap());
}

type GradFn = fn(&Tensor<f64>, &Tensor<f64>) -> (f64, Vec<f64>);

fn fd_check(name: &str, f: GradFn, p: &Tensor<f64>, g: &Tensor<f64>) {
    let (_, grad) = f(p, g);
    let h = 1e-6;
    for k in (0..p.len()).step_by(7) {
        let (mut a, mut b) = (p.clone(), p.clone());
        a.data_mut()[k] += h;
        b.data_mut()[k] -= h;
        let num = (f(&a, g).0 - f(&b, g).0) / (2.0 * h);
        assert!(rel_err(grad[k], num) < 1e-3, "{name} at {k}: {} vs {num}", grad[k]);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut r = rng(10);
    let p = uniform(&mut r, &[1, 16, 16], 0.02, 0.98);
    let g = binary(&mut r, &[1, 16, 16]);
    fd_check("bce", |p, g| bce_grad(p, g).unwrap(), &p, &g);
    fd_check("ssim", |p, g| ssim_grad(p, g, &SsimConfig::default()).unwrap(), &p, &g);
    fd_check("iou", |p, g| iou_loss_grad(p, g).unwrap(), &p, &g);
    fd_check(
        "hybrid",
        |p, g| {
            let (parts, grad) = hybrid_loss_grad(p, g, &LossWeights::default(), &SsimConfig::default()).unwrap();
            (parts.total, grad)
        },
        &p,
        &g,
    );
    let t = uniform(&mut r, &[4, 2], 0.0, 1.0);
    let q = uniform(&mut r, &[4, 2], 0.0, 1.0);
    fd_check("tracking", |p, g| tracking_loss_grad(p, g).unwrap(), &q, &t);
}

#[test]
fn hybrid_gradient_is_sum_of_components() {
    let cfg = SsimConfig::default();
    let mut r = rng(11);
    let p = uniform(&mut r, &[2, 16, 16], 0.02, 0.98);
    let g = binary(&mut r, &[2, 16, 16]);
    let w = LossWeights { a: 0.7, b: 1.3, c: 0.4, ..LossWeights::default() };
    let (_, gh) = hybrid_loss_grad(&p, &g, &w, &cfg).unwrap();
    let (_, gb) = bce_grad(&p, &g).unwrap();
    let (_, gs) = ssim_grad(&p, &g, &cfg).unwrap();
    let (_, gi) = iou_loss_grad(&p, &g).unwrap();
    for k in 0..gh.len() {
        assert!((gh[k] - (w.a * gb[k] - w.b * gs[k] + w.c * gi[k])).abs() < 1e-12);
    }
}

#[test]
fn tape_losses_backpropagate() {
    let cfg = SsimConfig::default();
    let mut r = rng(12);
    let p0 = uniform(&mut r, &[1, 1, 16, 16], 0.05, 0.95);
    let g = binary(&mut r, &[1, 1, 16, 16]);
    let w = LossWeights { sup_weights: vec![0.5, 2.0], ..LossWeights::default() };
    let mut tape = Tape::<f64>::train();
    let p = tape.param(p0.clone());
    let q = tape.scale(p, 0.9).unwrap();
    let (l, parts) = sup_loss_var(&mut tape, &[p, q], &g, &w, &cfg).unwrap();
    assert_eq!(parts.len(), 2);
    let want = sup_loss(&[&p0, &p0.map(|v| 0.9 * v)], &g, &w, &cfg).unwrap();
    assert!((tape.value(l).item() - want).abs() < 1e-12);
    let grads = tape.backward(l).unwrap();
    let (_, g1) = hybrid_loss_grad(&p0, &g, &w, &cfg).unwrap();
    let (_, g2) = hybrid_loss_grad(&p0.map(|v| 0.9 * v), &g, &w, &cfg).unwrap();
    for (k, &v) in grads.get(p).unwrap().data().iter().enumerate() {
        assert!((v - (0.5 * g1[k] + 2.0 * 0.9 * g2[k])).abs() < 1e-12);
    }
}

#[test]
fn config_validation() {
    assert!(LossWeights::default().validate(5).is_ok());
    assert!(matches!(LossWeights::default().validate(4), Err(Error::CountMismatch { .. })));
    assert!(LossWeights { a: 0.0, b: 0.0, c: 0.0, ..LossWeights::default() }.validate(5).is_err());
    assert!(SsimConfig { window: 10, ..SsimConfig::default() }.validate().is_err());
    let taps = SsimConfig::default().taps();
    assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-15 && taps.len() == 11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prop_loss_ranges(seed in 0u64..100_000) {
        let cfg = SsimConfig::default();
        let mut r = rng(seed);
        let p = uniform(&mut r, &[1, 16, 16], 0.0, 1.0);
        let g = binary(&mut r, &[1, 16, 16]);
        let b = bce(&p, &g).unwrap();
        let s = ssim(&p, &g, &cfg).unwrap();
        let i = iou_loss(&p, &g).unwrap();
        prop_assert!(b.is_finite() && b >= 0.0);
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((0.0..=1.0).contains(&i));
    }

    #[test]
    fn prop_ssim_gradient(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let p = uniform(&mut r, &[1, 16, 16], 0.0, 1.0);
        let g = uniform(&mut r, &[1, 16, 16], 0.0, 1.0);
        let cfg = SsimConfig::default();
        let (_, grad) = ssim_grad(&p, &g, &cfg).unwrap();
        let k = r.random_range(0..p.len());
        let h = 1e-6;
        let (mut a, mut b) = (p.clone(), p.clone());
        a.data_mut()[k] += h;
        b.data_mut()[k] -= h;
        let num = (ssim(&a, &g, &cfg).unwrap() - ssim(&b, &g, &cfg).unwrap()) / (2.0 * h);
        prop_assert!(rel_err(grad[k], num) < 1e-3, "{} vs {}", grad[k], num);
    }
}
