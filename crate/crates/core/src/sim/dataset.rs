use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dvs::{frames_to_events, DvsConfig};
use super::events::EventStream;
use super::glyph::{procedural_glyph, GLYPH_CLASSES};
use super::image::GrayImage;
use super::scatter::{scatter_forward, ScatteringConfig};
use super::scene::{generate_trajectory, render_scene, Trajectory, TrajectoryMode};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SceneMode {
    /// Randomly moving glyph seen through one slab pass.
    #[default]
    Transmission,
    /// Stationary blinking glyph seen in backscatter.
    Reflection,
}

impl SceneMode {
    pub fn trajectory_mode(self) -> TrajectoryMode {
        match self {
            SceneMode::Transmission => TrajectoryMode::RandomWalk,
            SceneMode::Reflection => TrajectoryMode::StationaryBlink,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GlyphSource {
    #[default]
    Procedural,
    /// Directory of `.pgm` / `.png` images, used in sorted file-name order.
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub mode: SceneMode,
    pub sensor_width: u16,
    pub sensor_height: u16,
    pub n_frames: usize,
    pub step_max: f32,
    pub glyph_size: usize,
    pub glyph_source: GlyphSource,
    pub scatter: ScatteringConfig,
    pub dvs: DvsConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: SceneMode::Transmission,
            sensor_width: 128,
            sensor_height: 128,
            n_frames: 80,
            step_max: 0.01,
            glyph_size: 40,
            glyph_source: GlyphSource::Procedural,
            scatter: ScatteringConfig::default(),
            dvs: DvsConfig::default(),
        }
    }
}

impl SimConfig {
    /// Switches scene mode together with the slab geometry it implies.
    pub fn with_mode(mut self, mode: SceneMode) -> Self {
        self.mode = mode;
        match mode {
            SceneMode::Transmission => {
                self.scatter.passes = 1;
                self.scatter.specular_level = 0.0;
            }
            SceneMode::Reflection => {
                self.scatter.passes = 2;
                if self.scatter.specular_level == 0.0 {
                    self.scatter.specular_level = ScatteringConfig::reflection().specular_level;
                }
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scatter.validate()?;
        self.dvs.validate()?;
        let passes = match self.mode {
            SceneMode::Transmission => 1,
            SceneMode::Reflection => 2,
        };
        if self.scatter.passes != passes {
            return Err(Error::InvalidConfig(format!(
                "{:?} mode needs scatter.passes = {passes}",
                self.mode
            )));
        }
        if self.n_frames < 2 {
            return Err(Error::InvalidConfig("n_frames must be >= 2".into()));
        }
        if !(0.0..=0.5).contains(&self.step_max) {
            return Err(Error::InvalidConfig("step_max must be in [0, 0.5]".into()));
        }
        if self.glyph_size == 0
            || self.glyph_size > self.sensor_width as usize
            || self.glyph_size > self.sensor_height as usize
        {
            return Err(Error::InvalidConfig("glyph_size must be in [1, sensor size]".into()));
        }
        Ok(())
    }
}

/// One line of `manifest.jsonl`. File names are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub event_file: String,
    pub truth_file: String,
    pub trajectory_file: String,
    pub mode: SceneMode,
    pub config_hash: u64,
}

/// Contents of a sample's trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub frame_period_us: u64,
    pub sensor_width: u16,
    pub sensor_height: u16,
    pub glyph_size: usize,
    pub trajectory: Trajectory,
}

impl TrajectoryRecord {
    /// Normalized glyph centre at time `t_us`: the last frame shown at or
    /// before `t_us`.
    pub fn position_at(&self, t_us: u64) -> (f32, f32) {
        let k = (t_us / self.frame_period_us.max(1)) as usize;
        let p = &self.trajectory.positions;
        p[k.min(p.len() - 1)]
    }
}

/// A generated sample held in memory.
pub struct Sample {
    pub stream: EventStream,
    pub truth: GrayImage,
    pub trajectory: TrajectoryRecord,
}

/// Loads every `.pgm`/`.png` in `dir`, sorted by file name.
pub fn load_glyph_dir(dir: &Path) -> Result<Vec<GrayImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("pgm" | "png")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(dir, "no .pgm or .png glyphs found"));
    }
    paths.iter().map(|p| GrayImage::read(p)).collect()
}

/// Glyph placed with full intensity at `pos` on a black sensor-sized canvas.
pub fn place_glyph(glyph: &GrayImage, pos: (f32, f32), width: usize, height: usize) -> Result<GrayImage> {
    let still = Trajectory {
        mode: TrajectoryMode::RandomWalk,
        positions: vec![pos],
        envelope: vec![1.0],
    };
    render_scene(glyph, &still, 0, width, height)
}

/// Simulates one sample from its own seed.
///
/// The truth image is the unscattered glyph at its final position.
pub fn generate_sample(cfg: &SimConfig, glyphs: &[GrayImage], seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let glyph = if glyphs.is_empty() {
        let class = rng.random_range(0..GLYPH_CLASSES);
        procedural_glyph(class, cfg.glyph_size, &mut rng)
    } else {
        glyphs[rng.random_range(0..glyphs.len())].resize(cfg.glyph_size, cfg.glyph_size)
    };
    let traj = generate_trajectory(cfg.mode.trajectory_mode(), cfg.n_frames, cfg.step_max, rng.next_u64())?;
    let (w, h) = (cfg.sensor_width as usize, cfg.sensor_height as usize);
    let noise_seed = rng.next_u64();
    let frames = (0..cfg.n_frames)
        .map(|k| {
            let clean = render_scene(&glyph, &traj, k, w, h)?;
            scatter_forward(&clean, &cfg.scatter, derive_seed(noise_seed, k as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let stream = frames_to_events(&frames, &cfg.dvs)?;
    let truth = place_glyph(&glyph, *traj.positions.last().expect("n_frames >= 1"), w, h)?;
    Ok(Sample {
        stream,
        truth,
        trajectory: TrajectoryRecord {
            frame_period_us: cfg.dvs.frame_period_us(),
            sensor_width: cfg.sensor_width,
            sensor_height: cfg.sensor_height,
            glyph_size: cfg.glyph_size,
            trajectory: traj,
        },
    })
}

/// Generates `n_samples` into `out_dir` and writes the manifest.
///
/// Samples are independent (child seed per index) and run in parallel.
pub fn build_dataset(
    cfg: &SimConfig,
    n_samples: usize,
    seed: u64,
    out_dir: &Path,
    config_hash: u64,
) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let glyphs = match &cfg.glyph_source {
        GlyphSource::Procedural => Vec::new(),
        GlyphSource::Directory(dir) => load_glyph_dir(dir)?,
    };
    let entries = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let sample_seed = derive_seed(seed, i as u64);
            let mut sample = generate_sample(cfg, &glyphs, sample_seed)?;
            sample.stream.config_hash = config_hash;
            let id = format!("s{i:05}");
            let entry = ManifestEntry {
                event_file: format!("{id}.evs"),
                truth_file: format!("{id}.pgm"),
                trajectory_file: format!("{id}.traj.json"),
                id,
                seed: sample_seed,
                mode: cfg.mode,
                config_hash,
            };
            sample.stream.write(&out_dir.join(&entry.event_file))?;
            sample.truth.write_pgm(&out_dir.join(&entry.truth_file))?;
            let traj_path = out_dir.join(&entry.trajectory_file);
            fs::write(&traj_path, serde_json::to_vec_pretty(&sample.trajectory)?)
                .map_err(|e| Error::io(&traj_path, e))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_jsonl(path)
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}
