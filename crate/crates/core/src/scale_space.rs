//! Gaussian / difference-of-Gaussian scale space and extremum detection.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::real::Real;

/// Smallest octave side the pyramid will build.
pub const MIN_OCTAVE_SIDE: usize = 16;

/// A scale-space interest point. Coordinates and `sigma` are in the resized working image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint<T> {
    pub x: T,
    pub y: T,
    pub sigma: T,
    /// Dominant orientation in degrees, `[0, 360)`.
    pub theta: T,
    pub gray_value: u8,
    pub entropy_value: T,
    /// `|D(x^)|` after refinement.
    pub response: T,
}

impl<T: Real> Keypoint<T> {
    pub fn new(x: T, y: T, sigma: T) -> Self {
        Self {
            x,
            y,
            sigma,
            theta: T::zero(),
            gray_value: 0,
            entropy_value: T::zero(),
            response: T::zero(),
        }
    }

    pub fn distance_to(&self, other: &Self) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Octave<T> {
    pub levels: Vec<Field<T>>,
    /// Absolute scale of each level, in octave-0 pixels.
    pub sigmas: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid<T> {
    pub octaves: Vec<Octave<T>>,
    pub sigma0: T,
    pub scales_per_octave: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DogPyramid<T> {
    /// Per octave, `D_j = L_{j+1} - L_j`; `sigmas[j]` is the scale of `L_j`.
    pub octaves: Vec<Octave<T>>,
    pub sigma0: T,
    pub scales_per_octave: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams<T> {
    pub sigma0: T,
    pub scales_per_octave: usize,
    /// `None` builds as many octaves as stay at least 16x16.
    pub octaves: Option<usize>,
    pub contrast_threshold: T,
    /// Principal-curvature ratio bound; `None` disables the edge test.
    pub edge_ratio: Option<T>,
}

impl<T: Real> Default for DetectorParams<T> {
    fn default() -> Self {
        Self {
            sigma0: T::lit(1.6),
            scales_per_octave: 3,
            octaves: None,
            contrast_threshold: T::lit(0.01),
            edge_ratio: Some(T::lit(10.0)),
        }
    }
}

/// Number of octaves whose dimensions stay at least 16x16.
pub fn max_octaves(width: usize, height: usize) -> usize {
    let mut n = 0;
    let (mut w, mut h) = (width, height);
    while w.min(h) >= MIN_OCTAVE_SIDE {
        n += 1;
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    n
}

pub fn build_gaussian_pyramid<T: Real>(
    field: &Field<T>,
    sigma0: T,
    scales_per_octave: usize,
    octaves: Option<usize>,
) -> Result<Pyramid<T>> {
    if !(sigma0 > T::zero()) {
        return Err(Error::InvalidArgument("sigma0 must be positive".into()));
    }
    if scales_per_octave == 0 {
        return Err(Error::InvalidArgument("scales_per_octave must be >= 1".into()));
    }
    let available = max_octaves(field.width(), field.height());
    if available == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} field is too small for one {MIN_OCTAVE_SIDE}x{MIN_OCTAVE_SIDE} octave",
            field.width(),
            field.height()
        )));
    }
    let n_oct = match octaves {
        None => available,
        Some(0) => return Err(Error::InvalidArgument("octave count must be >= 1".into())),
        Some(n) if n > available => {
            return Err(Error::InvalidArgument(format!(
                "{n} octaves requested but only {available} fit a {}x{} field",
                field.width(),
                field.height()
            )))
        }
        Some(n) => n,
    };

    let s = scales_per_octave;
    let n_levels = s + 3;
    let k = T::lit(2.0).powf(T::one() / T::from_usize_lossy(s));
    let rel: Vec<T> = (0..n_levels)
        .map(|j| sigma0 * k.powi(j as i32))
        .collect();
    let increments: Vec<T> = (1..n_levels)
        .map(|j| (rel[j] * rel[j] - rel[j - 1] * rel[j - 1]).sqrt())
        .collect();

    let mut out: Vec<Octave<T>> = Vec::with_capacity(n_oct);
    for o in 0..n_oct {
        let base = match out.last() {
            None => field.gaussian_blur(sigma0),
            Some(prev) => prev.levels[s].downsample2(),
        };
        let mut levels = Vec::with_capacity(n_levels);
        levels.push(base);
        for inc in &increments {
            let next = levels.last().expect("non-empty").gaussian_blur(*inc);
            levels.push(next);
        }
        let scale = T::lit(2f64.powi(o as i32));
        out.push(Octave {
            levels,
            sigmas: rel.iter().map(|&r| r * scale).collect(),
        });
    }
    Ok(Pyramid {
        octaves: out,
        sigma0,
        scales_per_octave,
    })
}

impl<T: Real> Pyramid<T> {
    /// Octave and level whose scale is closest (in log scale) to `sigma`.
    pub fn nearest_level(&self, sigma: T) -> (usize, usize) {
        let s = self.scales_per_octave as f64;
        let ratio = (sigma / self.sigma0).as_f64().max(1e-12);
        let lev = (s * ratio.log2()).round().max(0.0) as usize;
        let spo = self.scales_per_octave;
        let mut o = lev / spo;
        let mut j = lev - o * spo;
        let last = self.octaves.len() - 1;
        if o > last {
            let max_j = self.octaves[last].levels.len() - 1;
            j = (j + (o - last) * spo).min(max_j);
            o = last;
        }
        (o, j)
    }
}

pub fn build_dog<T: Real>(p: &Pyramid<T>) -> DogPyramid<T> {
    let octaves = p
        .octaves
        .iter()
        .map(|oct| Octave {
            levels: oct.levels.windows(2).map(|w| w[1].sub(&w[0])).collect(),
            sigmas: oct.sigmas[..oct.sigmas.len().saturating_sub(1)].to_vec(),
        })
        .collect();
    DogPyramid {
        octaves,
        sigma0: p.sigma0,
        scales_per_octave: p.scales_per_octave,
    }
}

#[inline]
fn is_strict_extremum<T: Real>(below: &Field<T>, cur: &Field<T>, above: &Field<T>, x: usize, y: usize) -> bool {
    let v = cur.get(x, y);
    let first = cur.get(x - 1, y);
    let is_max = if v > first {
        true
    } else if v < first {
        false
    } else {
        return false;
    };
    let w = cur.width();
    for (fi, f) in [below, cur, above].into_iter().enumerate() {
        let d = f.data();
        for yy in y - 1..=y + 1 {
            for (i, &n) in d[yy * w + x - 1..yy * w + x + 2].iter().enumerate() {
                if fi == 1 && yy == y && i == 1 {
                    continue;
                }
                if is_max {
                    if n >= v {
                        return false;
                    }
                } else if n <= v {
                    return false;
                }
            }
        }
    }
    true
}

/// Solves the 3x3 system `h * x = b`; `None` when singular.
fn solve3<T: Real>(h: [[T; 3]; 3], b: [T; 3]) -> Option<[T; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
        - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() <= T::epsilon() * T::lit(1e-6) || !det.is_finite() {
        return None;
    }
    let mut out = [T::zero(); 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut m = h;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        let dc = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        *slot = dc / det;
    }
    Some(out)
}

/// One candidate of a single DoG level, refined and filtered.
fn refine<T: Real>(
    below: &Field<T>,
    cur: &Field<T>,
    above: &Field<T>,
    x: usize,
    y: usize,
    params: &DetectorParams<T>,
) -> Option<([T; 3], T)> {
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let two = T::lit(2.0);
    let v = cur.get(x, y);
    let dx = (cur.get(x + 1, y) - cur.get(x - 1, y)) * half;
    let dy = (cur.get(x, y + 1) - cur.get(x, y - 1)) * half;
    let ds = (above.get(x, y) - below.get(x, y)) * half;
    let dxx = cur.get(x + 1, y) + cur.get(x - 1, y) - two * v;
    let dyy = cur.get(x, y + 1) + cur.get(x, y - 1) - two * v;
    let dss = above.get(x, y) + below.get(x, y) - two * v;
    let dxy = (cur.get(x + 1, y + 1) - cur.get(x - 1, y + 1) - cur.get(x + 1, y - 1)
        + cur.get(x - 1, y - 1))
        * quarter;
    let dxs = (above.get(x + 1, y) - above.get(x - 1, y) - below.get(x + 1, y)
        + below.get(x - 1, y))
        * quarter;
    let dys = (above.get(x, y + 1) - above.get(x, y - 1) - below.get(x, y + 1)
        + below.get(x, y - 1))
        * quarter;

    let g = [dx, dy, ds];
    let h = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
    let offset = solve3(h, [-dx, -dy, -ds])
        .map(|o| o.map(|c| c.max(-half).min(half)))
        .unwrap_or([T::zero(); 3]);
    let contrast = (v + half * (g[0] * offset[0] + g[1] * offset[1] + g[2] * offset[2])).abs();
    if !(contrast > params.contrast_threshold) {
        return None;
    }
    if let Some(r) = params.edge_ratio {
        let tr = dxx + dyy;
        let det = dxx * dyy - dxy * dxy;
        if det <= T::zero() || tr * tr * r >= (r + T::one()) * (r + T::one()) * det {
            return None;
        }
    }
    Some((offset, contrast))
}

/// Strict 26-neighbour extrema, one quadratic refinement step, contrast and edge filtering.
pub fn detect_keypoints<T: Real>(dog: &DogPyramid<T>, params: &DetectorParams<T>) -> Vec<Keypoint<T>> {
    let s = T::from_usize_lossy(dog.scales_per_octave);
    let mut jobs = Vec::new();
    for (o, oct) in dog.octaves.iter().enumerate() {
        for l in 1..oct.levels.len().saturating_sub(1) {
            jobs.push((o, l));
        }
    }
    jobs.par_iter()
        .flat_map_iter(|&(o, l)| {
            let oct = &dog.octaves[o];
            let (below, cur, above) = (&oct.levels[l - 1], &oct.levels[l], &oct.levels[l + 1]);
            let (w, h) = (cur.width(), cur.height());
            let scale = T::lit(2f64.powi(o as i32));
            let rows: Vec<Vec<Keypoint<T>>> = (1..h.saturating_sub(1))
                .into_par_iter()
                .map(|y| {
                    let mut found = Vec::new();
                    for x in 1..w - 1 {
                        if !is_strict_extremum(below, cur, above, x, y) {
                            continue;
                        }
                        if let Some((off, contrast)) = refine(below, cur, above, x, y, params) {
                            let px = (T::from_usize_lossy(x) + off[0]) * scale;
                            let py = (T::from_usize_lossy(y) + off[1]) * scale;
                            let level = T::from_usize_lossy(l) + off[2];
                            let sigma = dog.sigma0
                                * T::lit(2.0).powf(T::from_usize_lossy(o) + level / s);
                            let mut kp = Keypoint::new(px, py, sigma);
                            kp.response = contrast;
                            found.push(kp);
                        }
                    }
                    found
                })
                .collect();
            rows.into_iter().flatten()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(size: usize, cx: f64, cy: f64, std: f64, amp: f64) -> Field<f64> {
        Field::from_fn(size, size, |x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            amp * (-(dx * dx + dy * dy) / (2.0 * std * std)).exp()
        })
    }

    #[test]
    fn scale_ratio_definition() {
        let f = Field::filled(64, 64, 0.0f64);
        let p = build_gaussian_pyramid(&f, 1.6, 3, None).unwrap();
        let k = p.octaves[0].sigmas[1] / p.octaves[0].sigmas[0];
        assert!((k - 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!((k - 1.2599).abs() < 1e-4);
        assert_eq!(p.octaves.len(), 3);
        assert_eq!(p.octaves[0].levels.len(), 6);
        assert!((p.octaves[1].sigmas[0] - 3.2).abs() < 1e-12);
    }

    #[test]
    fn octave_dimensions_round_up() {
        let f = Field::filled(100, 37, 0.0f64);
        let p = build_gaussian_pyramid(&f, 1.6, 3, None).unwrap();
        let dims: Vec<_> = p
            .octaves
            .iter()
            .map(|o| (o.levels[0].width(), o.levels[0].height()))
            .collect();
        assert_eq!(dims, vec![(100, 37), (50, 19)]);
    }

    #[test]
    fn too_small_field_is_rejected() {
        let f = Field::filled(15, 40, 0.0f64);
        assert!(build_gaussian_pyramid(&f, 1.6, 3, None).is_err());
        let f = Field::filled(40, 40, 0.0f64);
        assert!(build_gaussian_pyramid(&f, 1.6, 3, Some(3)).is_err());
    }

    #[test]
    fn constant_field_everything_flat() {
        let f = Field::filled(48, 40, 0.3f64);
        let p = build_gaussian_pyramid(&f, 1.6, 3, None).unwrap();
        for o in &p.octaves {
            for l in &o.levels {
                assert!(l.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
            }
        }
        let dog = build_dog(&p);
        assert!(dog
            .octaves
            .iter()
            .flat_map(|o| o.levels.iter())
            .all(|l| l.data().iter().all(|&v| v.abs() < 1e-12)));
        assert!(detect_keypoints(&dog, &DetectorParams::default()).is_empty());
    }

    #[test]
    fn impulse_matches_analytic_gaussian() {
        let n = 65;
        let c = 32usize;
        let mut f = Field::filled(n, n, 0.0f64);
        f.set(c, c, 1.0);
        let p = build_gaussian_pyramid(&f, 1.6, 3, Some(1)).unwrap();
        for (level, &sigma) in p.octaves[0].levels.iter().zip(&p.octaves[0].sigmas) {
            let analytic = Field::from_fn(n, n, |x, y| {
                let dx = x as f64 - c as f64;
                let dy = y as f64 - c as f64;
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
                    / (2.0 * std::f64::consts::PI * sigma * sigma)
            });
            let err: f64 = level
                .data()
                .iter()
                .zip(analytic.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = analytic.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err / norm < 0.05, "sigma {sigma}: rel L2 {}", err / norm);
        }
        let dog = build_dog(&p);
        for d in &dog.octaves[0].levels {
            let (lo, _) = d.min_max();
            assert_eq!(d.get(c, c), lo, "DoG of an impulse peaks (negatively) at the impulse");
        }
    }

    #[test]
    fn two_level_octave_gives_one_dog_level() {
        let a = Field::filled(16, 16, 1.0f64);
        let b = Field::filled(16, 16, 3.0f64);
        let p = Pyramid {
            octaves: vec![Octave {
                levels: vec![a, b],
                sigmas: vec![1.0, 2.0],
            }],
            sigma0: 1.0,
            scales_per_octave: 1,
        };
        let dog = build_dog(&p);
        assert_eq!(dog.octaves[0].levels.len(), 1);
        assert!(dog.octaves[0].levels[0].data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn zero_dog_has_no_keypoints() {
        let z = Field::filled(32, 32, 0.0f64);
        let dog = DogPyramid {
            octaves: vec![Octave {
                levels: vec![z.clone(), z.clone(), z.clone(), z],
                sigmas: vec![1.6, 2.0, 2.5, 3.2],
            }],
            sigma0: 1.6,
            scales_per_octave: 2,
        };
        assert!(detect_keypoints(&dog, &DetectorParams { contrast_threshold: 0.0, ..Default::default() }).is_empty());
    }

    /// Oracle: exhaustive scan for the largest |DoG| sample over all levels.
    fn strongest_dog_sample(dog: &DogPyramid<f64>) -> (f64, f64, f64) {
        let mut best = (0.0, 0.0, 0.0, 0.0);
        for (o, oct) in dog.octaves.iter().enumerate() {
            let scale = 2f64.powi(o as i32);
            for (l, lev) in oct.levels.iter().enumerate() {
                for y in 0..lev.height() {
                    for x in 0..lev.width() {
                        let v = lev.get(x, y).abs();
                        if v > best.0 {
                            best = (v, x as f64 * scale, y as f64 * scale, oct.sigmas[l]);
                        }
                    }
                }
            }
        }
        (best.1, best.2, best.3)
    }

    #[test]
    fn gaussian_blob_is_detected_near_centre_and_scale() {
        let f = blob(96, 47.0, 49.0, 4.0, 1.0);
        let p = build_gaussian_pyramid(&f, 1.6, 3, None).unwrap();
        let dog = build_dog(&p);
        let (ox, oy, osig) = strongest_dog_sample(&dog);
        assert!((ox - 47.0).abs() <= 1.0 && (oy - 49.0).abs() <= 1.0);
        assert!((2.8..=5.7).contains(&osig));

        let kps = detect_keypoints(&dog, &DetectorParams::default());
        let hit = kps.iter().any(|k| {
            ((k.x - 47.0).powi(2) + (k.y - 49.0).powi(2)).sqrt() <= 2.0
                && (2.8..=5.7).contains(&k.sigma)
        });
        assert!(hit, "{kps:?}");
    }

    #[test]
    fn blob_shift_moves_keypoint() {
        let detect = |cx: f64| {
            let f = blob(96, cx, 48.0, 4.0, 1.0);
            let dog = build_dog(&build_gaussian_pyramid(&f, 1.6, 3, None).unwrap());
            let kps = detect_keypoints(&dog, &DetectorParams::default());
            kps.into_iter()
                .filter(|k| (2.8..=5.7).contains(&k.sigma))
                .max_by(|a, b| a.response.partial_cmp(&b.response).unwrap())
                .unwrap()
        };
        let a = detect(40.0);
        let b = detect(47.0);
        assert!(((b.x - a.x) - 7.0).abs() <= 1.0);
        assert!((b.y - a.y).abs() <= 1.0);
    }

    #[test]
    fn nearest_level_lookup() {
        let f = Field::filled(64, 64, 0.0f64);
        let p = build_gaussian_pyramid(&f, 1.6, 3, None).unwrap();
        assert_eq!(p.nearest_level(1.6), (0, 0));
        assert_eq!(p.nearest_level(1.6 * 2f64.powf(2.0 / 3.0)), (0, 2));
        assert_eq!(p.nearest_level(3.3), (1, 0));
        assert_eq!(p.nearest_level(0.5), (0, 0));
        // beyond the top octave the top octave's extra levels are used
        assert_eq!(p.nearest_level(1.6 * 8.0), (2, 3));
    }
}
