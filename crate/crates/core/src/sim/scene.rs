use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    RandomWalk,
    StationaryBlink,
}

/// Per-frame normalized glyph centre and display envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: TrajectoryMode,
    pub positions: Vec<(f32, f32)>,
    pub envelope: Vec<f32>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn reflect(mut v: f32) -> f32 {
    loop {
        if v < 0.0 {
            v = -v;
        } else if v > 1.0 {
            v = 2.0 - v;
        } else {
            return v;
        }
    }
}

/// Random walk with reflecting walls, or a fixed centre with a linear
/// 0→1→0 envelope (ramps over the first and last quarter).
///
/// Both modes start uniformly in [0.2, 0.8]².
pub fn generate_trajectory(
    mode: TrajectoryMode,
    n_frames: usize,
    step_max: f32,
    seed: u64,
) -> Result<Trajectory> {
    if n_frames == 0 {
        return Err(Error::InvalidConfig("trajectory needs at least one frame".into()));
    }
    if !(0.0..=0.5).contains(&step_max) {
        return Err(Error::InvalidConfig(format!("step_max {step_max} not in [0, 0.5]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = (rng.random_range(0.2..=0.8f32), rng.random_range(0.2..=0.8f32));
    let mut positions = Vec::with_capacity(n_frames);
    let envelope;
    match mode {
        TrajectoryMode::RandomWalk => {
            let mut p = start;
            positions.push(p);
            for _ in 1..n_frames {
                let (dx, dy) = if step_max > 0.0 {
                    (
                        rng.random_range(-step_max..=step_max),
                        rng.random_range(-step_max..=step_max),
                    )
                } else {
                    (0.0, 0.0)
                };
                p = (reflect(p.0 + dx), reflect(p.1 + dy));
                positions.push(p);
            }
            envelope = vec![1.0; n_frames];
        }
        TrajectoryMode::StationaryBlink => {
            positions = vec![start; n_frames];
            envelope = blink_envelope(n_frames);
        }
    }
    Ok(Trajectory {
        mode,
        positions,
        envelope,
    })
}

/// Trapezoid that is 0 at both ends and 1 on the middle half.
pub fn blink_envelope(n: usize) -> Vec<f32> {
    if n < 3 {
        return vec![0.0; n];
    }
    let last = (n - 1) as f32;
    let ramp = last / 4.0;
    (0..n)
        .map(|i| {
            let t = i as f32;
            (t / ramp).min((last - t) / ramp).clamp(0.0, 1.0)
        })
        .collect()
}

/// Top-left pixel at which a `gw × gh` glyph centred on `pos` is placed.
pub fn glyph_origin(pos: (f32, f32), gw: usize, gh: usize, width: usize, height: usize) -> (i64, i64) {
    (
        (pos.0 as f64 * width as f64 - gw as f64 / 2.0).round() as i64,
        (pos.1 as f64 * height as f64 - gh as f64 / 2.0).round() as i64,
    )
}

/// Blits `glyph` centred at the trajectory position of `frame`, scaled by
/// the envelope, onto a black `width × height` canvas (clipped at borders).
pub fn render_scene(
    glyph: &GrayImage,
    traj: &Trajectory,
    frame: usize,
    width: usize,
    height: usize,
) -> Result<GrayImage> {
    if glyph.width > width || glyph.height > height {
        return Err(Error::InvalidConfig(format!(
            "glyph {}x{} larger than canvas {}x{}",
            glyph.width, glyph.height, width, height
        )));
    }
    let (Some(&pos), Some(&env)) = (traj.positions.get(frame), traj.envelope.get(frame)) else {
        return Err(Error::dim("render_scene", "frame", format!("frame {frame} of {}", traj.len())));
    };
    let mut canvas = GrayImage::zeros(width, height);
    if env == 0.0 {
        return Ok(canvas);
    }
    let (ox, oy) = glyph_origin(pos, glyph.width, glyph.height, width, height);
    for gy in 0..glyph.height {
        let y = oy + gy as i64;
        if y < 0 || y >= height as i64 {
            continue;
        }
        for gx in 0..glyph.width {
            let x = ox + gx as i64;
            if x < 0 || x >= width as i64 {
                continue;
            }
            canvas.data[y as usize * width + x as usize] = glyph.get(gx, gy) * env;
        }
    }
    Ok(canvas)
}
