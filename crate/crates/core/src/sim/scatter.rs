use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use crate::error::{Error, Result};

/// Parametric stand-in for a scattering slab: Gaussian PSF, DC background,
/// optional static specular spot and multiplicative per-pixel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatteringConfig {
    /// Scattering coefficient in mm⁻¹.
    pub mu_s: f32,
    pub g: f32,
    pub thickness_mm: f32,
    /// 1 for transmission, 2 for reflection.
    pub passes: u32,
    /// PSF growth in pixels per millimetre of optical path.
    pub k_psf: f32,
    pub background_level: f32,
    pub noise_std: f32,
    /// Peak of the static specular reflection (0 disables it).
    pub specular_level: f32,
}

impl Default for ScatteringConfig {
    fn default() -> Self {
        ScatteringConfig {
            mu_s: 6.0,
            g: 0.9,
            thickness_mm: 12.0,
            passes: 1,
            k_psf: 0.5,
            background_level: 0.1,
            noise_std: 0.02,
            specular_level: 0.0,
        }
    }
}

impl ScatteringConfig {
    pub fn reflection() -> Self {
        ScatteringConfig {
            passes: 2,
            specular_level: 0.3,
            ..Self::default()
        }
    }

    pub fn blur_sigma_px(&self) -> f32 {
        self.k_psf * self.thickness_mm * self.passes as f32
    }

    /// Optical depth in mean free paths, `μ_s · thickness · passes`.
    pub fn mfp(&self) -> f32 {
        self.mu_s * self.thickness_mm * self.passes as f32
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.mu_s > 0.0) {
            return bad(format!("mu_s {} must be > 0", self.mu_s));
        }
        if !(0.0..1.0).contains(&self.g) {
            return bad(format!("anisotropy g {} not in [0, 1)", self.g));
        }
        if !(self.thickness_mm > 0.0) {
            return bad(format!("thickness {} must be > 0", self.thickness_mm));
        }
        if !matches!(self.passes, 1 | 2) {
            return bad(format!("passes {} must be 1 or 2", self.passes));
        }
        if !(self.k_psf >= 0.0 && self.background_level >= 0.0 && self.noise_std >= 0.0 && self.specular_level >= 0.0) {
            return bad("k_psf, background_level, noise_std and specular_level must be >= 0".into());
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps with radius ⌈3σ⌉.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * (sigma as f64).powi(2))).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter().map(|&t| (t / s) as f32).collect()
}

/// Separable blur with zero padding.
pub fn gaussian_blur(img: &GrayImage, sigma: f32) -> GrayImage {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return img.clone();
    }
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);
    let mut tmp = vec![0.0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let sx = x + j as i64 - r;
                if (0..w).contains(&sx) {
                    acc += kv * img.data[(y * w + sx) as usize];
                }
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = GrayImage::zeros(img.width, img.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let sy = y + j as i64 - r;
                if (0..h).contains(&sy) {
                    acc += kv * tmp[(sy * w + x) as usize];
                }
            }
            out.data[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Static specular term: a broad Gaussian spot centred on the canvas.
pub fn specular_map(width: usize, height: usize, level: f32) -> Vec<f32> {
    let (cx, cy) = (width as f32 / 2.0, height as f32 / 2.0);
    let s = width.min(height) as f32 / 4.0;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            out.push(level * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp());
        }
    }
    out
}

/// blur → + background (+ specular) → × (1 + N(0, noise_std)) → clamp ≥ 0.
pub fn scatter_forward(frame: &GrayImage, cfg: &ScatteringConfig, seed: u64) -> Result<GrayImage> {
    cfg.validate()?;
    let mut out = gaussian_blur(frame, cfg.blur_sigma_px());
    let spec = (cfg.specular_level > 0.0).then(|| specular_map(out.width, out.height, cfg.specular_level));
    for (i, v) in out.data.iter_mut().enumerate() {
        *v += cfg.background_level + spec.as_ref().map_or(0.0, |s| s[i]);
    }
    if cfg.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, cfg.noise_std)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for v in out.data.iter_mut() {
            *v *= 1.0 + normal.sample(&mut rng);
        }
    }
    for v in out.data.iter_mut() {
        *v = v.max(0.0);
    }
    Ok(out)
}
