//! Runs the filter chain on a simulated stream and shows how many events
//! each stage keeps and how they land in the spike tensor.

use neuroscatter::preprocess::{preprocess, BinMode, InsectEyeConfig, PreprocessConfig};
use neuroscatter::sim::{generate_sample, SimConfig};

fn main() -> neuroscatter::Result<()> {
    let sim = SimConfig { sensor_width: 64, sensor_height: 64, n_frames: 40, step_max: 0.03, glyph_size: 24, ..SimConfig::default() };
    let sample = generate_sample(&sim, &[], 5)?;
    let cfg = PreprocessConfig {
        insect_eye: InsectEyeConfig { field: 2, threshold: 1, window_us: 10_000 },
        bin_count: 8,
        bin_mode: BinMode::Count,
        out_h: 32,
        out_w: 32,
        ..PreprocessConfig::default()
    };
    let (tensor, report) = preprocess(&sample.stream, &cfg)?;
    let names = ["raw", "roi", "activity", "stc", "antiflicker", "insect_eye", "binned"];
    for (name, n) in names.iter().zip(report.as_array()) {
        println!("{name:>12}: {n}");
    }
    println!("tensor {:?}, total count {}", tensor.data.shape(), tensor.data.sum());
    for t in 0..tensor.time_steps() {
        let step = tensor.step(t)?;
        let on: f32 = step.data()[..step.len() / 2].iter().sum();
        let off: f32 = step.data()[step.len() / 2..].iter().sum();
        println!("  bin {t}: ON {on:>5}  OFF {off:>5}");
    }
    Ok(())
}
