//! End-to-end run on a small synthetic dataset: simulate, preprocess,
//! train a few epochs and evaluate, all in a temporary directory.

use neuroscatter::config::RunConfig;
use neuroscatter::pipeline::{cmd_eval, cmd_gen, cmd_preprocess, cmd_train, CHECKPOINT_FILE};

fn main() -> neuroscatter::Result<()> {
    let dir = std::env::temp_dir().join("neuroscatter_train_toy");
    let mut cfg = RunConfig { seed: 1, samples: 24, test_fraction: 0.25, ..RunConfig::default() };
    cfg.sim.sensor_width = 64;
    cfg.sim.sensor_height = 64;
    cfg.sim.n_frames = 40;
    cfg.sim.step_max = 0.03;
    cfg.sim.glyph_size = 24;
    cfg.sim.scatter.thickness_mm = 6.0;
    cfg.preprocess.insect_eye.field = 2;
    cfg.preprocess.insect_eye.threshold = 1;
    cfg.preprocess.stc = None;
    cfg.preprocess.out_h = 32;
    cfg.preprocess.out_w = 32;
    cfg.preprocess.bin_count = 6;
    cfg.arch.in_h = 32;
    cfg.arch.in_w = 32;
    cfg.arch.time_steps = 6;
    cfg.train.epochs = 4;

    let (data, tensors, run, eval) = (dir.join("data"), dir.join("tensors"), dir.join("run"), dir.join("eval"));
    cmd_gen(&cfg, &data)?;
    cmd_preprocess(&cfg, &data, &tensors)?;
    cmd_train(&cfg, &tensors, &run, false, false, |e| {
        println!(
            "epoch {}  train {:.3}  test {:.3}  ssim {:.3}  track {:.4}",
            e.epoch, e.train_loss, e.test_loss, e.test_ssim, e.test_track_mse
        )
    })?;
    let report = cmd_eval(&cfg, &run.join(CHECKPOINT_FILE), &tensors, &eval, false, false)?;
    println!(
        "held-out {} samples: ssim {:.3}  mse {:.4}; frames and traces in {}",
        report.summary.samples.len(),
        report.summary.mean_ssim,
        report.summary.mean_mse,
        eval.display()
    );
    Ok(())
}
