//! Evaluates the reconstruction losses on a square target for a few
//! predictions of decreasing quality.

use neuroscatter::loss::{bce, hybrid_loss, iou_loss, ssim, tracking_loss, LossWeights, SsimConfig};
use neuroscatter::tensor::Tensor;

fn main() -> neuroscatter::Result<()> {
    let (h, w) = (24, 24);
    let square = |lo: usize, hi: usize| {
        Tensor::from_fn(&[1, h, w], move |i| {
            let (y, x) = (i / w, i % w);
            if (lo..hi).contains(&y) && (lo..hi).contains(&x) { 1.0f64 } else { 0.0 }
        })
    };
    let truth = square(6, 18);
    let cfg = SsimConfig::default();
    let weights = LossWeights::default();
    let preds = [
        ("near-perfect", truth.map(|v| if v == 1.0 { 0.95 } else { 0.05 })),
        ("shifted", square(8, 20).map(|v| 0.05 + 0.9 * v)),
        ("uniform 0.5", Tensor::full(&[1, h, w], 0.5)),
        ("inverted", truth.map(|v| 0.95 - 0.9 * v)),
    ];
    println!("{:<13} {:>8} {:>8} {:>8} {:>8}", "prediction", "bce", "ssim", "iou", "hybrid");
    for (name, p) in &preds {
        println!(
            "{name:<13} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            bce(p, &truth)?,
            ssim(p, &truth, &cfg)?,
            iou_loss(p, &truth)?,
            hybrid_loss(p, &truth, &weights, &cfg)?
        );
    }
    let pred = Tensor::new(vec![2, 2], vec![0.50f64, 0.52, 0.61, 0.40])?;
    let gt = Tensor::new(vec![2, 2], vec![0.48f64, 0.50, 0.60, 0.45])?;
    println!("tracking mse over 2 steps: {:.6}", tracking_loss(&pred, &gt)?);
    Ok(())
}
