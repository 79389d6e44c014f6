use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel image with intensities nominally in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim("image", "data", format!("{}x{} needs {} values, got {}", width, height, width * height, data.len())));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Intensity-weighted centre `(x, y)` in pixel units, `None` for a black image.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut s) = (0.0, 0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y) as f64;
                sx += v * x as f64;
                sy += v * y as f64;
                s += v;
            }
        }
        (s > 0.0).then(|| (sx / s, sy / s))
    }

    /// Area-weighted resampling to `width × height`.
    pub fn resize(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = GrayImage::zeros(width, height);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for oy in 0..height {
            let (y0, y1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
            for ox in 0..width {
                let (x0, x1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
                let (mut acc, mut area) = (0.0, 0.0);
                let mut iy = y0.floor() as usize;
                while (iy as f64) < y1 && iy < self.height {
                    let wy = (y1.min(iy as f64 + 1.0) - y0.max(iy as f64)).max(0.0);
                    let mut ix = x0.floor() as usize;
                    while (ix as f64) < x1 && ix < self.width {
                        let wx = (x1.min(ix as f64 + 1.0) - x0.max(ix as f64)).max(0.0);
                        acc += wx * wy * self.get(ix, iy) as f64;
                        area += wx * wy;
                        ix += 1;
                    }
                    iy += 1;
                }
                out.data[oy * width + ox] = if area > 0.0 { (acc / area) as f32 } else { 0.0 };
            }
        }
        out
    }

    /// 8-bit binary PGM (P5), values scaled by 255 and clamped.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn from_pgm(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |d: &str| Error::format(path, d.to_string());
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(bad("missing P5 magic"));
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for field in &mut fields {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("malformed header"))?;
        }
        pos += 1;
        let [w, h, maxval] = fields;
        if maxval == 0 || maxval > 65535 {
            return Err(bad("maxval out of range"));
        }
        let wide = maxval > 255;
        let need = w * h * if wide { 2 } else { 1 };
        let body = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated pixel data"))?;
        let data = if wide {
            body.chunks(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / maxval as f32)
                .collect()
        } else {
            body.iter().map(|&v| v as f32 / maxval as f32).collect()
        };
        GrayImage::new(w, h, data)
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm(&bytes, path)
    }

    /// Loads an 8- or 16-bit PNG, converting colour to luma.
    pub fn read_png(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = info.color_type.samples();
        let bytes = &buf[..info.buffer_size()];
        let data = bytes
            .chunks(channels)
            .map(|px| match channels {
                1 | 2 => px[0] as f32 / 255.0,
                _ => (0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32) / 255.0,
            })
            .collect();
        GrayImage::new(w, h, data)
    }

    /// Dispatches on the file extension (`pgm` or `png`).
    pub fn read(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "pgm" => Self::read_pgm(path),
            Some(e) if e == "png" => Self::read_png(path),
            _ => Err(Error::format(path, "expected a .pgm or .png image")),
        }
    }
}
