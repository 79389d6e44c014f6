//! Simulates one transmission-mode sample, writes it as an `.evs` file and
//! reads it back.

use neuroscatter::sim::{generate_sample, EventStream, SimConfig};

fn main() -> neuroscatter::Result<()> {
    let cfg = SimConfig { sensor_width: 64, sensor_height: 64, n_frames: 40, step_max: 0.03, glyph_size: 24, ..SimConfig::default() };
    let sample = generate_sample(&cfg, &[], 17)?;
    let s = &sample.stream;
    let on = s.events.iter().filter(|e| e.p > 0).count();
    println!("{}x{} sensor, {} frames at {} Hz", s.width, s.height, cfg.n_frames, cfg.dvs.frame_rate_hz);
    println!("events: {} ({} ON, {} OFF)", s.len(), on, s.len() - on);
    if let Some((t0, t1)) = s.trigger_interval() {
        println!("exposure window: {t0}..{t1} us");
    }
    let path = &sample.trajectory.trajectory.positions;
    let (first, last) = (path[0], path[path.len() - 1]);
    println!("target moved from ({:.3}, {:.3}) to ({:.3}, {:.3})", first.0, first.1, last.0, last.1);

    let file = std::env::temp_dir().join("neuroscatter_example.evs");
    s.write(&file)?;
    let back = EventStream::read(&file)?;
    assert_eq!(&back, s);
    println!("round trip through {} ok ({} bytes)", file.display(), std::fs::metadata(&file).map(|m| m.len()).unwrap_or(0));
    Ok(())
}
