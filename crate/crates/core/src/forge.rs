//! Synthetic copy-move forgeries with exact ground truth, and procedural test textures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::{GrayImage, Mask, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    fn center(&self) -> [f64; 2] {
        [
            self.x as f64 + (self.width as f64 - 1.0) / 2.0,
            self.y as f64 + (self.height as f64 - 1.0) / 2.0,
        ]
    }

    fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && py >= self.y && px < self.x + self.width && py < self.y + self.height
    }
}

/// The patch `source` is rotated by `rotation_deg` and scaled by `scale` about its centre, then
/// moved so its centre lands `offset` pixels away.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgeSpec {
    pub source: Rect,
    pub offset: [f64; 2],
    pub rotation_deg: f64,
    pub scale: f64,
}

impl ForgeSpec {
    pub fn translation(source: Rect, dx: f64, dy: f64) -> Self {
        Self {
            source,
            offset: [dx, dy],
            rotation_deg: 0.0,
            scale: 1.0,
        }
    }

    /// Target position to source position.
    fn inverse_map(&self, q: [f64; 2]) -> [f64; 2] {
        let c = self.source.center();
        let (s, co) = self.rotation_deg.to_radians().sin_cos();
        let (vx, vy) = (q[0] - c[0] - self.offset[0], q[1] - c[1] - self.offset[1]);
        [
            c[0] + (co * vx + s * vy) / self.scale,
            c[1] + (-s * vx + co * vy) / self.scale,
        ]
    }

    /// Does the pasted patch cover target pixel `q`?
    fn covers(&self, q: [f64; 2]) -> bool {
        let p = self.inverse_map(q);
        let r = &self.source;
        p[0] >= r.x as f64 - 0.5
            && p[0] < (r.x + r.width) as f64 - 0.5
            && p[1] >= r.y as f64 - 0.5
            && p[1] < (r.y + r.height) as f64 - 0.5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeResult {
    pub image: RgbImage,
    /// Source rectangle plus pasted footprint.
    pub mask: Mask,
}

fn split_channels(img: &RgbImage) -> [GrayImage; 3] {
    std::array::from_fn(|c| GrayImage::from_fn(img.width(), img.height(), |x, y| img.get(x, y)[c]))
}

pub fn forge(img: &RgbImage, spec: &ForgeSpec) -> Result<ForgeResult> {
    let (w, h) = (img.width(), img.height());
    let r = spec.source;
    if r.width == 0 || r.height == 0 || r.x + r.width > w || r.y + r.height > h {
        return Err(Error::InvalidArgument(format!(
            "source patch {}x{} at ({}, {}) does not fit in a {w}x{h} image",
            r.width, r.height, r.x, r.y
        )));
    }
    if !(spec.scale > 0.0 && spec.scale.is_finite()) || !spec.rotation_deg.is_finite() {
        return Err(Error::InvalidArgument("scale must be positive and rotation finite".into()));
    }
    let c = r.center();
    let (s, co) = spec.rotation_deg.to_radians().sin_cos();
    let half = [r.width as f64 / 2.0, r.height as f64 / 2.0];
    let corners: Vec<[f64; 2]> = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]
        .iter()
        .map(|k| {
            let (vx, vy) = (k[0] * half[0] * spec.scale, k[1] * half[1] * spec.scale);
            [
                c[0] + spec.offset[0] + co * vx - s * vy,
                c[1] + spec.offset[1] + s * vx + co * vy,
            ]
        })
        .collect();
    let min_x = corners.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_x = corners.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = corners.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = corners.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    if min_x < -0.5 || min_y < -0.5 || max_x > w as f64 - 0.5 || max_y > h as f64 - 0.5 {
        return Err(Error::InvalidArgument("destination falls outside the image".into()));
    }

    let channels = split_channels(img);
    let mut out = img.clone();
    let mut mask = Mask::new(w, h);
    let x0 = min_x.floor().max(0.0) as usize;
    let y0 = min_y.floor().max(0.0) as usize;
    let x1 = (max_x.ceil() as usize).min(w - 1);
    let y1 = (max_y.ceil() as usize).min(h - 1);
    let mut footprint = Vec::new();
    for qy in y0..=y1 {
        for qx in x0..=x1 {
            if spec.covers([qx as f64, qy as f64]) {
                if r.contains(qx, qy) {
                    return Err(Error::InvalidArgument("destination overlaps the source patch".into()));
                }
                footprint.push((qx, qy));
            }
        }
    }
    for &(qx, qy) in &footprint {
        let p = spec.inverse_map([qx as f64, qy as f64]);
        let px: [u8; 3] =
            std::array::from_fn(|k| channels[k].sample_bicubic(p[0], p[1]).round().clamp(0.0, 255.0) as u8);
        out.put(qx, qy, px);
        mask.set(qx, qy, true);
    }
    for y in r.y..r.y + r.height {
        for x in r.x..r.x + r.width {
            mask.set(x, y, true);
        }
    }
    Ok(ForgeResult { image: out, mask })
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in [0, 1].
fn value_noise(w: usize, h: usize, cell: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen::<f64>()).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let fy = y as f64 / cell;
        let iy = fy.floor() as usize;
        let ty = smooth(fy - iy as f64);
        for x in 0..w {
            let fx = x as f64 / cell;
            let ix = fx.floor() as usize;
            let tx = smooth(fx - ix as f64);
            let g = |i: usize, j: usize| lattice[j * gw + i];
            let top = g(ix, iy) * (1.0 - tx) + g(ix + 1, iy) * tx;
            let bottom = g(ix, iy + 1) * (1.0 - tx) + g(ix + 1, iy + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

/// Multi-scale noise texture whose local contrast varies across the image.
pub fn synthetic_texture(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tex = vec![0.0; width * height];
    for (cell, amp) in [(40.0, 1.0), (20.0, 0.8), (10.0, 0.6), (5.0, 0.45), (2.5, 0.3)] {
        for (t, n) in tex.iter_mut().zip(value_noise(width, height, cell, &mut rng)) {
            *t += amp * (n - 0.5);
        }
    }
    let contrast = value_noise(width, height, 80.0, &mut rng);
    let base = value_noise(width, height, 120.0, &mut rng);
    let px: Vec<u8> = tex
        .iter()
        .zip(contrast.iter().zip(&base))
        .map(|(t, (c, b))| {
            let v = 60.0 + 140.0 * b + (0.3 + 1.1 * c) * 110.0 * t;
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(width, height, px).expect("dimensions match")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CloneKind {
    Translation,
    Rotation(f64),
    Scale(f64),
}

/// A textured `size x size` image with one `patch x patch` clone of `kind`, placed at random.
pub fn synthetic_forgery(size: usize, patch: usize, kind: CloneKind, seed: u64) -> Result<(ForgeResult, ForgeSpec)> {
    let base = RgbImage::from_gray(&synthetic_texture(size, size, seed));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (rotation_deg, scale) = match kind {
        CloneKind::Translation => (0.0, 1.0),
        CloneKind::Rotation(a) => (a, 1.0),
        CloneKind::Scale(s) => (0.0, s),
    };
    if patch == 0 || patch >= size {
        return Err(Error::InvalidArgument("patch must be smaller than the image".into()));
    }
    for _ in 0..1000 {
        let sx = rng.gen_range(0..=size - patch);
        let sy = rng.gen_range(0..=size - patch);
        let c = [sx as f64 + (patch as f64 - 1.0) / 2.0, sy as f64 + (patch as f64 - 1.0) / 2.0];
        let tx = rng.gen_range(0.0..size as f64);
        let ty = rng.gen_range(0.0..size as f64);
        let spec = ForgeSpec {
            source: Rect::new(sx, sy, patch, patch),
            offset: [(tx - c[0]).round(), (ty - c[1]).round()],
            rotation_deg,
            scale,
        };
        // keep a margin between the two regions so they stay separable
        let reach = patch as f64 * scale.max(1.0) * std::f64::consts::SQRT_2 / 2.0 + patch as f64 / 2.0;
        if spec.offset[0].hypot(spec.offset[1]) < reach + 8.0 {
            continue;
        }
        if let Ok(res) = forge(&base, &spec) {
            return Ok((res, spec));
        }
    }
    Err(Error::InvalidArgument("no valid clone placement found".into()))
}
