//! Procedural stroke digits: ten polyline templates on the unit square,
//! jittered per sample and rasterized with anti-aliased round strokes.

use rand::Rng;

use super::image::GrayImage;

const STROKES: [&[&[(f32, f32)]]; 10] = [
    &[&[(0.5, 0.1), (0.2, 0.25), (0.2, 0.75), (0.5, 0.9), (0.8, 0.75), (0.8, 0.25), (0.5, 0.1)]],
    &[&[(0.35, 0.25), (0.55, 0.1), (0.55, 0.9)], &[(0.35, 0.9), (0.75, 0.9)]],
    &[&[(0.2, 0.3), (0.4, 0.1), (0.7, 0.12), (0.8, 0.35), (0.2, 0.9), (0.8, 0.9)]],
    &[&[(0.2, 0.12), (0.8, 0.12), (0.45, 0.45), (0.8, 0.65), (0.65, 0.9), (0.2, 0.85)]],
    &[&[(0.65, 0.9), (0.65, 0.1), (0.15, 0.65), (0.85, 0.65)]],
    &[&[(0.8, 0.1), (0.25, 0.1), (0.22, 0.45), (0.7, 0.45), (0.8, 0.7), (0.6, 0.9), (0.2, 0.85)]],
    &[&[(0.7, 0.1), (0.3, 0.4), (0.22, 0.75), (0.5, 0.9), (0.78, 0.72), (0.6, 0.5), (0.28, 0.58)]],
    &[&[(0.2, 0.1), (0.8, 0.1), (0.4, 0.9)], &[(0.35, 0.5), (0.7, 0.5)]],
    &[
        &[(0.5, 0.5), (0.25, 0.3), (0.5, 0.1), (0.75, 0.3), (0.5, 0.5)],
        &[(0.5, 0.5), (0.2, 0.7), (0.5, 0.9), (0.8, 0.7), (0.5, 0.5)],
    ],
    &[&[(0.72, 0.42), (0.4, 0.5), (0.22, 0.28), (0.5, 0.1), (0.75, 0.25), (0.7, 0.6), (0.35, 0.9)]],
];

pub const GLYPH_CLASSES: usize = STROKES.len();

fn seg_dist(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx - px, a.1 + t * dy - py);
    (cx * cx + cy * cy).sqrt()
}

/// Renders digit `class` (mod 10) into a `size × size` image.
///
/// Control points move by up to ±6% of the size and stroke width varies in
/// [12%, 18%] of the size.
pub fn procedural_glyph(class: usize, size: usize, rng: &mut impl Rng) -> GrayImage {
    let strokes = STROKES[class % GLYPH_CLASSES];
    let s = size as f32;
    let width = rng.random_range(0.12..0.18) * s;
    let lines: Vec<Vec<(f32, f32)>> = strokes
        .iter()
        .map(|line| {
            line.iter()
                .map(|&(x, y)| {
                    let jx = rng.random_range(-0.06..=0.06);
                    let jy = rng.random_range(-0.06..=0.06);
                    ((x + jx).clamp(0.05, 0.95) * s, (y + jy).clamp(0.05, 0.95) * s)
                })
                .collect()
        })
        .collect();
    let mut img = GrayImage::zeros(size, size);
    let r = width / 2.0;
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let d = lines
                .iter()
                .flat_map(|l| l.windows(2).map(|w| seg_dist(px, py, w[0], w[1])))
                .fold(f32::INFINITY, f32::min);
            img.data[y * size + x] = (r - d + 0.5).clamp(0.0, 1.0);
        }
    }
    img
}
