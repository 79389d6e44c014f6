//! Streaming event filters. Each keeps bounded per-pixel state so feeding a
//! stream in chunks gives the same result as feeding it whole.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Event;

/// Half-open pixel window `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: u16,
    pub y0: u16,
    pub x1: u16,
    pub y1: u16,
}

impl Roi {
    pub fn full(width: u16, height: u16) -> Self {
        Roi {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    pub fn width(&self) -> u16 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u16 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn validate(&self, width: u16, height: u16) -> Result<()> {
        if self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(Error::InvalidConfig(format!("empty roi {self:?}")));
        }
        if self.x1 > width || self.y1 > height {
            return Err(Error::InvalidConfig(format!("roi {self:?} outside {width}x{height} sensor")));
        }
        Ok(())
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// Keeps in-ROI events, re-based to the ROI origin.
pub fn roi_filter(events: &[Event], roi: Roi) -> Vec<Event> {
    events
        .iter()
        .filter(|e| roi.contains(e.x, e.y))
        .map(|e| Event {
            x: e.x - roi.x0,
            y: e.y - roi.y0,
            ..*e
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityFilterConfig {
    pub window_us: u64,
    /// Odd side of the square support, centre pixel included.
    pub neighborhood: usize,
}

impl Default for ActivityFilterConfig {
    fn default() -> Self {
        ActivityFilterConfig {
            window_us: 5_000,
            neighborhood: 3,
        }
    }
}

/// Background-activity filter: an event survives iff some earlier event
/// (any polarity) in its k×k neighbourhood is at most `window_us` old.
pub struct ActivityFilter {
    cfg: ActivityFilterConfig,
    width: usize,
    height: usize,
    last: Vec<Option<u64>>,
}

impl ActivityFilter {
    pub fn new(cfg: ActivityFilterConfig, width: u16, height: u16) -> Result<Self> {
        if cfg.neighborhood % 2 == 0 {
            return Err(Error::InvalidConfig("activity neighborhood must be odd".into()));
        }
        if cfg.window_us == 0 {
            return Err(Error::InvalidConfig("activity window must be > 0".into()));
        }
        let (width, height) = (width as usize, height as usize);
        Ok(ActivityFilter {
            cfg,
            width,
            height,
            last: vec![None; width * height],
        })
    }

    pub fn process(&mut self, events: &[Event]) -> Vec<Event> {
        let r = (self.cfg.neighborhood / 2) as i64;
        let mut out = Vec::new();
        for e in events {
            let (x, y) = (e.x as i64, e.y as i64);
            let mut support = false;
            'scan: for ny in (y - r).max(0)..=(y + r).min(self.height as i64 - 1) {
                for nx in (x - r).max(0)..=(x + r).min(self.width as i64 - 1) {
                    if let Some(t) = self.last[ny as usize * self.width + nx as usize] {
                        if e.t - t <= self.cfg.window_us {
                            support = true;
                            break 'scan;
                        }
                    }
                }
            }
            if support {
                out.push(*e);
            }
            self.last[e.y as usize * self.width + e.x as usize] = Some(e.t);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StcFilterConfig {
    pub window_us: u64,
}

impl Default for StcFilterConfig {
    fn default() -> Self {
        StcFilterConfig { window_us: 10_000 }
    }
}

/// Spatio-temporal contrast filter: an event survives iff the same pixel's
/// previous event had the same polarity and is at most `window_us` old.
pub struct StcFilter {
    window_us: u64,
    width: usize,
    last: Vec<Option<(u64, i8)>>,
}

impl StcFilter {
    pub fn new(cfg: StcFilterConfig, width: u16, height: u16) -> Result<Self> {
        if cfg.window_us == 0 {
            return Err(Error::InvalidConfig("stc window must be > 0".into()));
        }
        Ok(StcFilter {
            window_us: cfg.window_us,
            width: width as usize,
            last: vec![None; width as usize * height as usize],
        })
    }

    pub fn process(&mut self, events: &[Event]) -> Vec<Event> {
        let mut out = Vec::new();
        for e in events {
            let slot = &mut self.last[e.y as usize * self.width + e.x as usize];
            if let Some((t, p)) = *slot {
                if p == e.p && e.t - t <= self.window_us {
                    out.push(*e);
                }
            }
            *slot = Some((e.t, e.p));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntiflickerConfig {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for AntiflickerConfig {
    fn default() -> Self {
        AntiflickerConfig {
            low_hz: 50.0,
            high_hz: 500.0,
        }
    }
}

/// Consecutive in-band alternations after which a pixel is muted.
pub const FLICKER_RUN: u32 = 4;

#[derive(Clone, Copy, Default)]
struct FlickerPixel {
    last_t: Option<u64>,
    last_p: i8,
    segment_start: u64,
    run: u32,
}

/// Band-reject on polarity alternation frequency.
///
/// A polarity change at `t` closes a segment that began at the first event
/// of the previous polarity; its length Δ gives the estimate `1/(2Δ)`. Events
/// are dropped while at least [`FLICKER_RUN`] consecutive estimates fall in
/// `[low, high]`. Silence longer than half a period at `low` clears the run.
pub struct AntiflickerFilter {
    cfg: AntiflickerConfig,
    width: usize,
    pixels: Vec<FlickerPixel>,
}

impl AntiflickerFilter {
    pub fn new(cfg: AntiflickerConfig, width: u16, height: u16) -> Result<Self> {
        if !(cfg.low_hz > 0.0 && cfg.high_hz > 0.0) {
            return Err(Error::InvalidConfig("antiflicker band edges must be > 0".into()));
        }
        Ok(AntiflickerFilter {
            cfg,
            width: width as usize,
            pixels: vec![FlickerPixel::default(); width as usize * height as usize],
        })
    }

    pub fn process(&mut self, events: &[Event]) -> Vec<Event> {
        let silence_us = 1e6 / (2.0 * self.cfg.low_hz);
        let mut out = Vec::new();
        for e in events {
            let px = &mut self.pixels[e.y as usize * self.width + e.x as usize];
            match px.last_t {
                None => px.segment_start = e.t,
                Some(last) if (e.t - last) as f64 > silence_us => {
                    px.run = 0;
                    px.segment_start = e.t;
                }
                Some(_) if e.p != px.last_p => {
                    let dt = (e.t - px.segment_start).max(1) as f64;
                    let freq = 1e6 / (2.0 * dt);
                    if freq >= self.cfg.low_hz && freq <= self.cfg.high_hz {
                        px.run += 1;
                    } else {
                        px.run = 0;
                    }
                    px.segment_start = e.t;
                }
                Some(_) => {}
            }
            px.last_t = Some(e.t);
            px.last_p = e.p;
            if px.run < FLICKER_RUN {
                out.push(*e);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsectEyeConfig {
    /// Side n of each square ommatidium.
    pub field: usize,
    /// Events needed to fire one output event.
    pub threshold: u32,
    /// Silence after which a counter restarts from zero.
    pub window_us: u64,
}

impl Default for InsectEyeConfig {
    fn default() -> Self {
        InsectEyeConfig {
            field: 4,
            threshold: 1,
            window_us: 10_000,
        }
    }
}

impl InsectEyeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.field == 0 || self.threshold == 0 {
            return Err(Error::InvalidConfig("insect eye field and threshold must be >= 1".into()));
        }
        Ok(())
    }

    pub fn out_dims(&self, width: u16, height: u16) -> (u16, u16) {
        (
            (width as usize).div_ceil(self.field) as u16,
            (height as usize).div_ceil(self.field) as u16,
        )
    }
}

/// Spatial pooling into n×n ommatidia with per-polarity leaky counters.
pub struct InsectEye {
    cfg: InsectEyeConfig,
    out_w: usize,
    counters: Vec<[(u32, u64); 2]>,
}

impl InsectEye {
    pub fn new(cfg: InsectEyeConfig, width: u16, height: u16) -> Result<Self> {
        cfg.validate()?;
        let (ow, oh) = cfg.out_dims(width, height);
        Ok(InsectEye {
            cfg,
            out_w: ow as usize,
            counters: vec![[(0, 0); 2]; ow as usize * oh as usize],
        })
    }

    pub fn process(&mut self, events: &[Event]) -> Vec<Event> {
        let n = self.cfg.field;
        let mut out = Vec::new();
        for e in events {
            let (ox, oy) = (e.x as usize / n, e.y as usize / n);
            let ch = if e.p > 0 { 0 } else { 1 };
            let (count, last) = &mut self.counters[oy * self.out_w + ox][ch];
            if *count > 0 && e.t - *last > self.cfg.window_us {
                *count = 0;
            }
            *count += 1;
            *last = e.t;
            if *count >= self.cfg.threshold {
                *count = 0;
                out.push(Event {
                    t: e.t,
                    x: ox as u16,
                    y: oy as u16,
                    p: e.p,
                });
            }
        }
        out
    }
}
