use serde::{Deserialize, Serialize};

use super::events::{Edge, Event, EventStream, Trigger};
use super::image::GrayImage;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DvsConfig {
    /// Log-intensity contrast threshold.
    pub theta: f32,
    /// Per-pixel dead time after an event.
    pub refractory_us: u64,
    pub frame_rate_hz: f32,
    /// Added to intensities before the logarithm.
    pub eps_floor: f32,
}

impl Default for DvsConfig {
    fn default() -> Self {
        DvsConfig {
            theta: 0.25,
            refractory_us: 0,
            frame_rate_hz: 1000.0,
            eps_floor: 1e-3,
        }
    }
}

impl DvsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::InvalidConfig(format!("dvs theta {} must be > 0", self.theta)));
        }
        if !(self.eps_floor > 0.0) {
            return Err(Error::InvalidConfig("dvs eps_floor must be > 0".into()));
        }
        if !(self.frame_rate_hz > 0.0) || self.frame_period_us() == 0 {
            return Err(Error::InvalidConfig("dvs frame_rate_hz must give a period of at least 1 us".into()));
        }
        Ok(())
    }

    pub fn frame_period_us(&self) -> u64 {
        (1e6 / self.frame_rate_hz as f64).round() as u64
    }
}

/// Log-threshold event synthesis.
///
/// Each pixel keeps a reference log level initialized from frame 0. Between
/// frames k−1 and k it emits ⌊|Δ|/θ⌋ events, Δ being the distance from the
/// reference, timestamped where the linearly interpolated log signal crosses
/// each level. Events suppressed by the refractory period do not move the
/// reference. Triggers mark the rising edge at 0 and the falling edge at
/// `n_frames · period`.
pub fn frames_to_events(frames: &[GrayImage], cfg: &DvsConfig) -> Result<EventStream> {
    cfg.validate()?;
    let Some(first) = frames.first() else {
        return Err(Error::Empty("frames_to_events: no frames"));
    };
    let (w, h) = (first.width, first.height);
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::InvalidConfig("sensor larger than 65535 pixels".into()));
    }
    if frames.iter().any(|f| f.width != w || f.height != h) {
        return Err(Error::dim("frames_to_events", "frame", "frames differ in size"));
    }
    let theta = cfg.theta as f64;
    let eps = cfg.eps_floor as f64;
    let period = cfg.frame_period_us();
    let log = |v: f32| (v.max(0.0) as f64 + eps).ln();
    let mut reference: Vec<f64> = first.data.iter().map(|&v| log(v)).collect();
    let mut prev = reference.clone();
    let mut last_event: Vec<Option<u64>> = vec![None; w * h];
    let mut events = Vec::new();
    for (k, frame) in frames.iter().enumerate().skip(1) {
        let t0 = (k as u64 - 1) * period;
        for (i, &v) in frame.data.iter().enumerate() {
            let l = log(v);
            let d = l - reference[i];
            let n = (d.abs() / theta + 1e-9).floor() as u64;
            if n > 0 {
                let sign = d.signum();
                let lp = prev[i];
                let mut emitted = 0u64;
                for j in 1..=n {
                    let level = reference[i] + j as f64 * theta * sign;
                    let frac = if l != lp { ((level - lp) / (l - lp)).clamp(0.0, 1.0) } else { 1.0 };
                    let t = t0 + (frac * period as f64).round() as u64;
                    if let Some(last) = last_event[i] {
                        if cfg.refractory_us > 0 && t < last + cfg.refractory_us {
                            break;
                        }
                    }
                    events.push(Event {
                        t,
                        x: (i % w) as u16,
                        y: (i / w) as u16,
                        p: if sign > 0.0 { 1 } else { -1 },
                    });
                    last_event[i] = Some(t);
                    emitted += 1;
                }
                reference[i] += emitted as f64 * theta * sign;
            }
            prev[i] = l;
        }
    }
    events.sort_by_key(|e| (e.t, e.y, e.x, e.p));
    Ok(EventStream {
        width: w as u16,
        height: h as u16,
        config_hash: 0,
        triggers: vec![
            Trigger { t: 0, edge: Edge::Rising },
            Trigger {
                t: frames.len() as u64 * period,
                edge: Edge::Falling,
            },
        ],
        events,
    })
}
