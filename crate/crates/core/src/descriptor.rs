//! Gray-image orientation assignment and 4x4x8 gradient histogram descriptors.

use rayon::prelude::*;

use crate::entropy::EntropyMap;
use crate::field::Field;
use crate::image_io::GrayImage;
use crate::real::{round_half_up, Real};
use crate::scale_space::{Keypoint, Pyramid};

pub const DESCRIPTOR_LEN: usize = 128;
const SPATIAL_BINS: usize = 4;
const ORIENTATION_BINS: usize = 8;
const ORIENTATION_HIST_BINS: usize = 36;
/// Gaussian window of the orientation histogram, in units of the keypoint scale.
const ORIENTATION_SIGMA_FACTOR: f64 = 1.5;
const ORIENTATION_RADIUS_FACTOR: f64 = 4.5;
/// Width of one spatial descriptor cell, in units of the keypoint scale.
const CELL_WIDTH_FACTOR: f64 = 3.0;
const CLAMP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor<T> {
    values: Vec<T>,
    degenerate: bool,
}

impl<T: Real> Descriptor<T> {
    /// Scales to unit length with no entry above 0.2.
    ///
    /// Entries are capped at 0.2 and the remainder rescaled so the result keeps unit norm; the
    /// scale is solved exactly rather than by repeated clamp/renormalize passes. With fewer than
    /// 25 non-zero entries a unit vector under the cap does not exist, and a single
    /// clamp-and-renormalize pass is used instead. A zero histogram is flagged degenerate.
    pub fn from_histogram(mut values: Vec<T>) -> Self {
        assert_eq!(values.len(), DESCRIPTOR_LEN);
        let n = values.iter().map(|&x| x * x).sum::<T>().sqrt();
        if !(n > T::epsilon()) {
            return Self::zero();
        }
        for v in &mut values {
            *v /= n;
        }
        let cap = T::lit(CLAMP);
        let nonzero = values.iter().filter(|&&v| v > T::zero()).count();
        if (nonzero as f64) * CLAMP * CLAMP <= 1.0 {
            for v in &mut values {
                *v = v.min(cap);
            }
            let n2 = values.iter().map(|&x| x * x).sum::<T>().sqrt();
            for v in &mut values {
                *v /= n2;
            }
        } else {
            let scale = cap_scale(&values, cap);
            for v in &mut values {
                *v = (*v * scale).min(cap);
            }
        }
        Self {
            values,
            degenerate: false,
        }
    }

    pub fn zero() -> Self {
        Self {
            values: vec![T::zero(); DESCRIPTOR_LEN],
            degenerate: true,
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Set when the gradient window was empty; such descriptors never take part in matching.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn distance(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt()
    }
}

/// Solves `sum_i min(c * v_i, cap)^2 = 1` for `c`, given a unit vector `v`.
fn cap_scale<T: Real>(values: &[T], cap: T) -> T {
    let mut sorted: Vec<T> = values.iter().copied().filter(|&v| v > T::zero()).collect();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut rest: T = sorted.iter().map(|&v| v * v).sum();
    let cap2 = cap * cap;
    for (k, &v) in sorted.iter().enumerate() {
        // k entries clamped so far
        let c = ((T::one() - T::from_usize_lossy(k) * cap2) / rest).sqrt();
        if c * v <= cap {
            return c;
        }
        rest -= v * v;
    }
    T::one()
}

#[inline]
fn gradient<T: Real>(l: &Field<T>, x: usize, y: usize) -> (T, T) {
    (
        l.get(x + 1, y) - l.get(x - 1, y),
        l.get(x, y + 1) - l.get(x, y - 1),
    )
}

/// Quadrant-aware gradient angle in degrees, `[0, 360)`.
#[inline]
pub fn gradient_angle<T: Real>(gx: T, gy: T) -> T {
    let full = T::lit(360.0);
    let a = gy.atan2(gx).to_degrees();
    let a = if a < T::zero() { a + full } else { a };
    if a >= full {
        a - full
    } else {
        a
    }
}

struct LocalFrame<'a, T> {
    level: &'a Field<T>,
    x: T,
    y: T,
    sigma: T,
}

fn local_frame<'a, T: Real>(pyr: &'a Pyramid<T>, kp: &Keypoint<T>) -> LocalFrame<'a, T> {
    let (o, j) = pyr.nearest_level(kp.sigma);
    let scale = T::lit(2f64.powi(o as i32));
    LocalFrame {
        level: &pyr.octaves[o].levels[j],
        x: kp.x / scale,
        y: kp.y / scale,
        sigma: kp.sigma / scale,
    }
}

/// Dominant gradient orientation around the keypoint, in degrees.
pub fn compute_orientation<T: Real>(gray_pyramid: &Pyramid<T>, kp: &Keypoint<T>) -> T {
    let f = local_frame(gray_pyramid, kp);
    let (w, h) = (f.level.width() as i64, f.level.height() as i64);
    let radius = (f.sigma * T::lit(ORIENTATION_RADIUS_FACTOR)).round().to_i64().unwrap_or(0).max(1);
    let wsig = f.sigma * T::lit(ORIENTATION_SIGMA_FACTOR);
    let denom = T::lit(2.0) * wsig * wsig;
    let cx = round_half_up(f.x);
    let cy = round_half_up(f.y);
    let bin_width = T::lit(360.0 / ORIENTATION_HIST_BINS as f64);

    let mut hist = [T::zero(); ORIENTATION_HIST_BINS];
    for dy in -radius..=radius {
        let py = cy + dy;
        if py < 1 || py >= h - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let px = cx + dx;
            if px < 1 || px >= w - 1 || dx * dx + dy * dy > radius * radius {
                continue;
            }
            let (gx, gy) = gradient(f.level, px as usize, py as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == T::zero() {
                continue;
            }
            let ox = T::lit(px as f64) - f.x;
            let oy = T::lit(py as f64) - f.y;
            let weight = (-(ox * ox + oy * oy) / denom).exp() * mag;
            let b = gradient_angle(gx, gy) / bin_width;
            let b0 = b.floor();
            let frac = b - b0;
            let i0 = b0.to_usize().unwrap_or(0) % ORIENTATION_HIST_BINS;
            hist[i0] += weight * (T::one() - frac);
            hist[(i0 + 1) % ORIENTATION_HIST_BINS] += weight * frac;
        }
    }

    let (peak, &max) = hist
        .iter()
        .enumerate()
        .fold((0, &T::zero()), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
    if !(max > T::zero()) {
        return T::zero();
    }
    let l = hist[(peak + ORIENTATION_HIST_BINS - 1) % ORIENTATION_HIST_BINS];
    let r = hist[(peak + 1) % ORIENTATION_HIST_BINS];
    let curvature = l - T::lit(2.0) * max + r;
    let offset = if curvature < T::zero() {
        T::lit(0.5) * (l - r) / curvature
    } else {
        T::zero()
    };
    let angle = (T::from_usize_lossy(peak) + offset) * bin_width;
    let full = T::lit(360.0);
    let angle = angle % full;
    if angle < T::zero() {
        angle + full
    } else {
        angle
    }
}

/// 128-d descriptor sampled in the frame rotated by `-theta`.
pub fn compute_descriptor<T: Real>(gray_pyramid: &Pyramid<T>, kp: &Keypoint<T>) -> Descriptor<T> {
    let f = local_frame(gray_pyramid, kp);
    let d = SPATIAL_BINS;
    let n = ORIENTATION_BINS;
    let (w, h) = (f.level.width() as i64, f.level.height() as i64);
    let cell = f.sigma * T::lit(CELL_WIDTH_FACTOR);
    let radius = (cell * T::lit(std::f64::consts::SQRT_2 * (d as f64 + 1.0) * 0.5))
        .round()
        .to_i64()
        .unwrap_or(1)
        .max(1);
    let theta = kp.theta.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let half_d = T::lit(d as f64 * 0.5);
    let wdenom = T::lit(2.0) * half_d * half_d;
    let orient_scale = T::lit(n as f64 / 360.0);
    let cx = round_half_up(f.x);
    let cy = round_half_up(f.y);

    // padded (d+2) x (d+2) x (n+2) histogram so interpolation never branches on the border
    let stride_r = (d + 2) * (n + 2);
    let stride_c = n + 2;
    let mut hist = vec![T::zero(); (d + 2) * stride_r];

    for dy in -radius..=radius {
        let py = cy + dy;
        if py < 1 || py >= h - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let px = cx + dx;
            if px < 1 || px >= w - 1 {
                continue;
            }
            let ox = T::lit(px as f64) - f.x;
            let oy = T::lit(py as f64) - f.y;
            let c_rot = (cos_t * ox + sin_t * oy) / cell;
            let r_rot = (-sin_t * ox + cos_t * oy) / cell;
            let rbin = r_rot + half_d - T::lit(0.5);
            let cbin = c_rot + half_d - T::lit(0.5);
            let dlim = T::from_usize_lossy(d);
            if !(rbin > -T::one() && rbin < dlim && cbin > -T::one() && cbin < dlim) {
                continue;
            }
            let (gx, gy) = gradient(f.level, px as usize, py as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == T::zero() {
                continue;
            }
            let mut rel = gradient_angle(gx, gy) - kp.theta;
            while rel < T::zero() {
                rel += T::lit(360.0);
            }
            while rel >= T::lit(360.0) {
                rel -= T::lit(360.0);
            }
            let obin = rel * orient_scale;
            let weight = (-(c_rot * c_rot + r_rot * r_rot) / wdenom).exp() * mag;

            let r0f = rbin.floor();
            let c0f = cbin.floor();
            let o0f = obin.floor();
            let (fr, fc, fo) = (rbin - r0f, cbin - c0f, obin - o0f);
            // +1 shifts into the padded histogram
            let r0 = (r0f.to_i64().unwrap_or(-1) + 1) as usize;
            let c0 = (c0f.to_i64().unwrap_or(-1) + 1) as usize;
            let o0 = o0f.to_usize().unwrap_or(0);
            for (ri, wr) in [(0, T::one() - fr), (1, fr)] {
                for (ci, wc) in [(0, T::one() - fc), (1, fc)] {
                    for (oi, wo) in [(0, T::one() - fo), (1, fo)] {
                        let idx = (r0 + ri) * stride_r + (c0 + ci) * stride_c + o0 + oi;
                        hist[idx] += weight * wr * wc * wo;
                    }
                }
            }
        }
    }

    let mut out = vec![T::zero(); DESCRIPTOR_LEN];
    for r in 0..d {
        for c in 0..d {
            let base = (r + 1) * stride_r + (c + 1) * stride_c;
            // orientation bins n and n+1 wrap around to 0 and 1
            let mut bins = [T::zero(); ORIENTATION_BINS];
            for (k, &v) in hist[base..base + n + 2].iter().enumerate() {
                bins[k % n] += v;
            }
            out[(r * d + c) * n..(r * d + c + 1) * n].copy_from_slice(&bins);
        }
    }
    Descriptor::from_histogram(out)
}

/// Assigns `theta` to every keypoint and extracts its descriptor, in parallel.
pub fn orient_and_describe<T: Real>(
    gray_pyramid: &Pyramid<T>,
    kps: &mut [Keypoint<T>],
) -> Vec<Descriptor<T>> {
    kps.par_iter_mut()
        .map(|kp| {
            kp.theta = compute_orientation(gray_pyramid, kp);
            compute_descriptor(gray_pyramid, kp)
        })
        .collect()
}

/// Samples gray level and entropy at the nearest pixel. Out-of-bounds keypoints are dropped;
/// the second value is how many were.
pub fn attach_values<T: Real>(
    kps: Vec<Keypoint<T>>,
    gray: &GrayImage,
    entropy: &EntropyMap<T>,
) -> (Vec<Keypoint<T>>, usize) {
    let before = kps.len();
    let kept: Vec<_> = kps
        .into_iter()
        .filter_map(|mut kp| {
            let (ix, iy) = (round_half_up(kp.x), round_half_up(kp.y));
            if ix < 0 || iy < 0 || ix >= gray.width() as i64 || iy >= gray.height() as i64 {
                return None;
            }
            kp.gray_value = gray.get(ix as usize, iy as usize);
            kp.entropy_value = entropy.sample(kp.x, kp.y).ok()?;
            Some(kp)
        })
        .collect();
    let dropped = before - kept.len();
    if dropped > 0 {
        log::warn!("{dropped} keypoints fell outside the image and were dropped");
    }
    (kept, dropped)
}
