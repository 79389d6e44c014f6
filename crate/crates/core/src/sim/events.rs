//! Polarity events and the `.evs` container.
//!
//! Layout (little-endian): `EVSFILE\0`, u32 version, u32 reserved, u16 width,
//! u16 height, u64 config hash, u32 trigger count, triggers as (u64 t,
//! u8 edge), u64 event count, events as packed (u64 t, u16 x, u16 y, i8 p).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::Reader;
use crate::error::{Error, Result};

pub const EVS_MAGIC: &[u8; 8] = b"EVSFILE\0";
pub const EVS_VERSION: u32 = 1;
const EVENT_BYTES: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    /// Microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// +1 or −1.
    pub p: i8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Falling = 0,
    Rising = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub t: u64,
    pub edge: Edge,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub config_hash: u64,
    pub triggers: Vec<Trigger>,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16) -> Self {
        EventStream {
            width,
            height,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Same header and triggers, different events.
    pub fn with_events(&self, events: Vec<Event>) -> Self {
        EventStream {
            width: self.width,
            height: self.height,
            config_hash: self.config_hash,
            triggers: self.triggers.clone(),
            events,
        }
    }

    /// First rising edge and the falling edge that follows it.
    pub fn trigger_interval(&self) -> Option<(u64, u64)> {
        let start = self.triggers.iter().position(|t| t.edge == Edge::Rising)?;
        let end = self.triggers[start + 1..]
            .iter()
            .find(|t| t.edge == Edge::Falling)?;
        (end.t > self.triggers[start].t).then_some((self.triggers[start].t, end.t))
    }

    /// Checks ordering, bounds, polarity values and trigger alternation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for w in self.events.windows(2) {
            if w[1].t < w[0].t {
                return Err(format!("events out of order at t={}", w[1].t));
            }
        }
        for e in &self.events {
            if e.x >= self.width || e.y >= self.height {
                return Err(format!("event ({}, {}) outside {}x{}", e.x, e.y, self.width, self.height));
            }
            if e.p != 1 && e.p != -1 {
                return Err(format!("polarity {} not ±1", e.p));
            }
        }
        for w in self.triggers.windows(2) {
            if w[0].edge == w[1].edge || w[1].t < w[0].t {
                return Err("trigger markers must alternate in time order".into());
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.triggers.len() * 9 + self.events.len() * EVENT_BYTES);
        out.extend_from_slice(EVS_MAGIC);
        out.extend_from_slice(&EVS_VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&(self.triggers.len() as u32).to_le_bytes());
        for t in &self.triggers {
            out.extend_from_slice(&t.t.to_le_bytes());
            out.push(t.edge as u8);
        }
        out.extend_from_slice(&(self.events.len() as u64).to_le_bytes());
        for e in &self.events {
            out.extend_from_slice(&e.t.to_le_bytes());
            out.extend_from_slice(&e.x.to_le_bytes());
            out.extend_from_slice(&e.y.to_le_bytes());
            out.push(e.p as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(8)? != EVS_MAGIC {
            return Err(Error::format(path, "not an .evs file"));
        }
        let version = r.u32()?;
        if version != EVS_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        r.u32()?;
        let width = r.u16()?;
        let height = r.u16()?;
        let config_hash = r.u64()?;
        let n_trig = r.u32()? as usize;
        let mut triggers = Vec::with_capacity(n_trig.min(1 << 16));
        for _ in 0..n_trig {
            let t = r.u64()?;
            let edge = match r.take(1)?[0] {
                0 => Edge::Falling,
                1 => Edge::Rising,
                b => return Err(Error::format(path, format!("bad trigger edge {b}"))),
            };
            triggers.push(Trigger { t, edge });
        }
        let n_ev = r.u64()? as usize;
        if r.remaining() != n_ev.saturating_mul(EVENT_BYTES) {
            return Err(Error::format(path, "event count does not match payload size"));
        }
        let events = r
            .rest()
            .chunks_exact(EVENT_BYTES)
            .map(|c| Event {
                t: u64::from_le_bytes(c[0..8].try_into().unwrap()),
                x: u16::from_le_bytes([c[8], c[9]]),
                y: u16::from_le_bytes([c[10], c[11]]),
                p: c[12] as i8,
            })
            .collect();
        let stream = EventStream {
            width,
            height,
            config_hash,
            triggers,
            events,
        };
        stream.validate().map_err(|d| Error::format(path, d))?;
        Ok(stream)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
