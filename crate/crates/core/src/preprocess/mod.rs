//! Event preprocessing: ROI → activity → STC → antiflicker → insect eye →
//! temporal binning into `[T, 2, H, W]` spike tensors.

mod filters;
mod tensor_file;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use filters::{
    roi_filter, ActivityFilter, ActivityFilterConfig, AntiflickerConfig, AntiflickerFilter,
    InsectEye, InsectEyeConfig, Roi, StcFilter, StcFilterConfig, FLICKER_RUN,
};
pub use tensor_file::{BinMode, SpikeTensor, SPT_MAGIC, SPT_VERSION};

use crate::error::{Error, Result};
use crate::sim::{read_trajectory, write_jsonl, Event, EventStream, GrayImage, ManifestEntry, SceneMode, TrajectoryRecord};
use crate::tensor::Tensor;

pub const TENSOR_MANIFEST_FILE: &str = "tensors.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// `None` keeps the full sensor.
    pub roi: Option<Roi>,
    pub activity: Option<ActivityFilterConfig>,
    pub stc: Option<StcFilterConfig>,
    pub antiflicker: Option<AntiflickerConfig>,
    pub insect_eye: InsectEyeConfig,
    pub bin_count: usize,
    pub bin_mode: BinMode,
    pub out_h: usize,
    pub out_w: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            roi: None,
            activity: Some(ActivityFilterConfig::default()),
            stc: Some(StcFilterConfig::default()),
            antiflicker: Some(AntiflickerConfig::default()),
            insect_eye: InsectEyeConfig::default(),
            bin_count: 18,
            bin_mode: BinMode::Binary,
            out_h: 64,
            out_w: 64,
        }
    }
}

impl PreprocessConfig {
    /// No filtering and a 1×1 eye: only ROI and binning act.
    pub fn passthrough(bin_count: usize, out_h: usize, out_w: usize) -> Self {
        PreprocessConfig {
            roi: None,
            activity: None,
            stc: None,
            antiflicker: None,
            insect_eye: InsectEyeConfig {
                field: 1,
                threshold: 1,
                window_us: 10_000,
            },
            bin_count,
            bin_mode: BinMode::Count,
            out_h,
            out_w,
        }
    }

    pub fn roi_for(&self, width: u16, height: u16) -> Roi {
        self.roi.unwrap_or(Roi::full(width, height))
    }

    /// Checks the configuration against a sensor of `width × height`.
    pub fn validate(&self, width: u16, height: u16) -> Result<()> {
        let roi = self.roi_for(width, height);
        roi.validate(width, height)?;
        self.insect_eye.validate()?;
        if self.bin_count == 0 {
            return Err(Error::InvalidConfig("bin_count must be >= 1".into()));
        }
        let (ew, eh) = self.insect_eye.out_dims(roi.width(), roi.height());
        if (ew as usize) > self.out_w || (eh as usize) > self.out_h {
            return Err(Error::InvalidConfig(format!(
                "downsampled roi {ew}x{eh} exceeds output {}x{}",
                self.out_w, self.out_h
            )));
        }
        Ok(())
    }
}

/// Events surviving each stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub raw: usize,
    pub roi: usize,
    pub activity: usize,
    pub stc: usize,
    pub antiflicker: usize,
    pub insect_eye: usize,
    pub binned: usize,
}

impl StageReport {
    pub fn as_array(&self) -> [usize; 7] {
        [self.raw, self.roi, self.activity, self.stc, self.antiflicker, self.insect_eye, self.binned]
    }
}

/// Accumulates events into `[T, 2, out_h, out_w]` over a half-open
/// interval split into T equal bins. Inputs are placed at the top-left
/// corner; extra output rows/columns stay zero.
pub struct Binner {
    t: usize,
    mode: BinMode,
    out_h: usize,
    out_w: usize,
    start: u64,
    len: u64,
    data: Vec<f32>,
    binned: usize,
}

impl Binner {
    pub fn new(t: usize, mode: BinMode, out_h: usize, out_w: usize, interval: (u64, u64)) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidConfig("bin_count must be >= 1".into()));
        }
        if interval.1 <= interval.0 {
            return Err(Error::format("<stream>", "empty trigger interval"));
        }
        Ok(Binner {
            t,
            mode,
            out_h,
            out_w,
            start: interval.0,
            len: interval.1 - interval.0,
            data: vec![0.0; t * 2 * out_h * out_w],
            binned: 0,
        })
    }

    /// Temporal bin of `t_us`, `None` outside the interval.
    pub fn bin_of(&self, t_us: u64) -> Option<usize> {
        if t_us < self.start || t_us - self.start >= self.len {
            return None;
        }
        Some(((t_us - self.start) as u128 * self.t as u128 / self.len as u128) as usize)
    }

    /// Flat index of the cell an event lands in.
    pub fn cell_of(&self, e: &Event) -> Option<usize> {
        let b = self.bin_of(e.t)?;
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= self.out_w || y >= self.out_h {
            return None;
        }
        let c = if e.p > 0 { 0 } else { 1 };
        Some(((b * 2 + c) * self.out_h + y) * self.out_w + x)
    }

    pub fn push(&mut self, events: &[Event]) {
        for e in events {
            if let Some(i) = self.cell_of(e) {
                self.binned += 1;
                match self.mode {
                    BinMode::Binary => self.data[i] = 1.0,
                    BinMode::Count => self.data[i] += 1.0,
                }
            }
        }
    }

    pub fn binned(&self) -> usize {
        self.binned
    }

    pub fn finish(self) -> Tensor<f32> {
        Tensor::new(vec![self.t, 2, self.out_h, self.out_w], self.data).expect("binner shape")
    }
}

/// Bins a stream over its trigger interval.
pub fn bin_to_tensor(stream: &EventStream, t: usize, mode: BinMode, out_h: usize, out_w: usize) -> Result<SpikeTensor> {
    let interval = stream
        .trigger_interval()
        .ok_or_else(|| Error::format("<stream>", "no trigger interval"))?;
    if (stream.width as usize) > out_w || (stream.height as usize) > out_h {
        return Err(Error::dim(
            "bin_to_tensor",
            "spatial",
            format!("stream {}x{} exceeds output {out_w}x{out_h}", stream.width, stream.height),
        ));
    }
    let mut binner = Binner::new(t, mode, out_h, out_w, interval)?;
    binner.push(&stream.events);
    Ok(SpikeTensor {
        data: binner.finish(),
        mode,
        id: String::new(),
        config_hash: stream.config_hash,
    })
}

/// Streaming form of [`preprocess`]: feed chunks in time order with
/// [`Pipeline::push`], then call [`Pipeline::finish`].
pub struct Pipeline {
    roi: Roi,
    activity: Option<ActivityFilter>,
    stc: Option<StcFilter>,
    antiflicker: Option<AntiflickerFilter>,
    eye: InsectEye,
    binner: Binner,
    report: StageReport,
    mode: BinMode,
    config_hash: u64,
}

impl Pipeline {
    pub fn new(cfg: &PreprocessConfig, stream_header: &EventStream) -> Result<Self> {
        let (w, h) = (stream_header.width, stream_header.height);
        cfg.validate(w, h)?;
        let interval = stream_header
            .trigger_interval()
            .ok_or_else(|| Error::format("<stream>", "no trigger interval"))?;
        let roi = cfg.roi_for(w, h);
        let (rw, rh) = (roi.width(), roi.height());
        Ok(Pipeline {
            roi,
            activity: cfg.activity.map(|c| ActivityFilter::new(c, rw, rh)).transpose()?,
            stc: cfg.stc.map(|c| StcFilter::new(c, rw, rh)).transpose()?,
            antiflicker: cfg.antiflicker.map(|c| AntiflickerFilter::new(c, rw, rh)).transpose()?,
            eye: InsectEye::new(cfg.insect_eye, rw, rh)?,
            binner: Binner::new(cfg.bin_count, cfg.bin_mode, cfg.out_h, cfg.out_w, interval)?,
            report: StageReport::default(),
            mode: cfg.bin_mode,
            config_hash: stream_header.config_hash,
        })
    }

    pub fn push(&mut self, chunk: &[Event]) {
        self.report.raw += chunk.len();
        let mut ev = roi_filter(chunk, self.roi);
        self.report.roi += ev.len();
        if let Some(f) = &mut self.activity {
            ev = f.process(&ev);
        }
        self.report.activity += ev.len();
        if let Some(f) = &mut self.stc {
            ev = f.process(&ev);
        }
        self.report.stc += ev.len();
        if let Some(f) = &mut self.antiflicker {
            ev = f.process(&ev);
        }
        self.report.antiflicker += ev.len();
        let ev = self.eye.process(&ev);
        self.report.insect_eye += ev.len();
        self.binner.push(&ev);
        self.report.binned = self.binner.binned();
    }

    pub fn finish(self, id: &str) -> (SpikeTensor, StageReport) {
        (
            SpikeTensor {
                data: self.binner.finish(),
                mode: self.mode,
                id: id.to_string(),
                config_hash: self.config_hash,
            },
            self.report,
        )
    }
}

/// Whole-stream preprocessing.
pub fn preprocess(stream: &EventStream, cfg: &PreprocessConfig) -> Result<(SpikeTensor, StageReport)> {
    let mut p = Pipeline::new(cfg, stream)?;
    p.push(&stream.events);
    Ok(p.finish(""))
}

/// Output of every stage, for inspection.
#[derive(Clone, Debug, Default)]
pub struct StageOutputs {
    pub roi: Vec<Event>,
    pub activity: Vec<Event>,
    pub stc: Vec<Event>,
    pub antiflicker: Vec<Event>,
    pub insect_eye: Vec<Event>,
}

pub fn stage_outputs(stream: &EventStream, cfg: &PreprocessConfig) -> Result<StageOutputs> {
    cfg.validate(stream.width, stream.height)?;
    let roi = cfg.roi_for(stream.width, stream.height);
    let (rw, rh) = (roi.width(), roi.height());
    let r = roi_filter(&stream.events, roi);
    let a = match cfg.activity {
        Some(c) => ActivityFilter::new(c, rw, rh)?.process(&r),
        None => r.clone(),
    };
    let s = match cfg.stc {
        Some(c) => StcFilter::new(c, rw, rh)?.process(&a),
        None => a.clone(),
    };
    let f = match cfg.antiflicker {
        Some(c) => AntiflickerFilter::new(c, rw, rh)?.process(&s),
        None => s.clone(),
    };
    let e = InsectEye::new(cfg.insect_eye, rw, rh)?.process(&f);
    Ok(StageOutputs {
        roi: r,
        activity: a,
        stc: s,
        antiflicker: f,
        insect_eye: e,
    })
}

/// Sensor-resolution truth image → binary `[1, out_h, out_w]` target:
/// ROI crop, n×n block average, top-left placement, threshold at 0.5.
pub fn truth_target(img: &GrayImage, cfg: &PreprocessConfig) -> Result<Tensor<f32>> {
    let (w, h) = (img.width as u16, img.height as u16);
    cfg.validate(w, h)?;
    let roi = cfg.roi_for(w, h);
    let n = cfg.insect_eye.field;
    let (ew, eh) = cfg.insect_eye.out_dims(roi.width(), roi.height());
    let mut out = vec![0.0f32; cfg.out_h * cfg.out_w];
    for oy in 0..eh as usize {
        for ox in 0..ew as usize {
            let (mut s, mut c) = (0.0f64, 0usize);
            for y in oy * n..((oy + 1) * n).min(roi.height() as usize) {
                for x in ox * n..((ox + 1) * n).min(roi.width() as usize) {
                    s += img.get(x + roi.x0 as usize, y + roi.y0 as usize) as f64;
                    c += 1;
                }
            }
            if c > 0 && s / c as f64 >= 0.5 {
                out[oy * cfg.out_w + ox] = 1.0;
            }
        }
    }
    Tensor::new(vec![1, cfg.out_h, cfg.out_w], out)
}

/// Normalized sensor position → normalized output-grid position.
pub fn map_position(pos: (f32, f32), sensor: (u16, u16), cfg: &PreprocessConfig) -> (f32, f32) {
    let roi = cfg.roi_for(sensor.0, sensor.1);
    let n = cfg.insect_eye.field as f32;
    let x = (pos.0 * sensor.0 as f32 - roi.x0 as f32) / n / cfg.out_w as f32;
    let y = (pos.1 * sensor.1 as f32 - roi.y0 as f32) / n / cfg.out_h as f32;
    (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0))
}

/// Tracking target per time bin: the glyph centre shown at the end of the bin.
pub fn track_targets(
    record: &TrajectoryRecord,
    interval: (u64, u64),
    cfg: &PreprocessConfig,
) -> Vec<(f32, f32)> {
    let (start, end) = interval;
    let len = end - start;
    let t = cfg.bin_count as u64;
    (0..t)
        .map(|b| {
            let t_end = start + ((b + 1) as u128 * len as u128 / t as u128) as u64 - 1;
            map_position(
                record.position_at(t_end),
                (record.sensor_width, record.sensor_height),
                cfg,
            )
        })
        .collect()
}

/// One line of `tensors.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub id: String,
    pub tensor_file: String,
    pub truth_file: String,
    pub track: Vec<(f32, f32)>,
    pub mode: SceneMode,
    pub config_hash: u64,
    pub stages: StageReport,
}

/// Preprocesses every manifest sample found in `data_dir` into `out_dir`.
pub fn preprocess_dataset(
    data_dir: &Path,
    entries: &[ManifestEntry],
    cfg: &PreprocessConfig,
    out_dir: &Path,
    config_hash: u64,
) -> Result<Vec<TensorEntry>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows = entries
        .par_iter()
        .map(|m| {
            let stream = EventStream::read(&data_dir.join(&m.event_file))?;
            let record = read_trajectory(&data_dir.join(&m.trajectory_file))?;
            let truth = GrayImage::read_pgm(&data_dir.join(&m.truth_file))?;
            let mut p = Pipeline::new(cfg, &stream)?;
            p.push(&stream.events);
            let (mut tensor, stages) = p.finish(&m.id);
            tensor.config_hash = config_hash;
            let interval = stream.trigger_interval().expect("validated by pipeline");
            let target = truth_target(&truth, cfg)?;
            let entry = TensorEntry {
                id: m.id.clone(),
                tensor_file: format!("{}.spt", m.id),
                truth_file: format!("{}.truth.pgm", m.id),
                track: track_targets(&record, interval, cfg),
                mode: m.mode,
                config_hash,
                stages,
            };
            tensor.write(&out_dir.join(&entry.tensor_file))?;
            GrayImage::new(cfg.out_w, cfg.out_h, target.into_data())?
                .write_pgm(&out_dir.join(&entry.truth_file))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&out_dir.join(TENSOR_MANIFEST_FILE), &rows)?;
    Ok(rows)
}
