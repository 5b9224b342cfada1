//! Affine hypotheses from matches (iterative RANSAC) and tamper mask construction.
//!
//! Each accepted transform seeds discs around its inlier endpoints. The seeds grow over pixels
//! whose 7x7 neighbourhood correlates (ZNCC) with the neighbourhood warped through the
//! transform; the target patch is sampled through the affine map so rotated and scaled
//! clones correlate as well as translated ones. The union is cleaned by closing and opening,
//! small components are dropped, and the mask is taken back to the original resolution.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::image_io::{GrayImage, Mask};
use crate::matcher::MatchPair;
use crate::real::Real;
use crate::scale_space::Keypoint;

type Point<T> = [T; 2];

/// `p -> linear * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineTransform<T> {
    pub linear: [[T; 2]; 2],
    pub translation: [T; 2],
}

impl<T: Real> AffineTransform<T> {
    pub fn identity() -> Self {
        Self {
            linear: [[T::one(), T::zero()], [T::zero(), T::one()]],
            translation: [T::zero(); 2],
        }
    }

    pub fn translation(tx: T, ty: T) -> Self {
        Self {
            translation: [tx, ty],
            ..Self::identity()
        }
    }

    /// Rotation by `degrees` and isotropic `scale`, followed by a translation.
    pub fn similarity(degrees: T, scale: T, tx: T, ty: T) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        Self {
            linear: [[scale * c, -scale * s], [scale * s, scale * c]],
            translation: [tx, ty],
        }
    }

    #[inline]
    pub fn apply(&self, p: Point<T>) -> Point<T> {
        let m = &self.linear;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + self.translation[0],
            m[1][0] * p[0] + m[1][1] * p[1] + self.translation[1],
        ]
    }

    pub fn determinant(&self) -> T {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if det == T::zero() || !det.is_finite() {
            return None;
        }
        let m = &self.linear;
        let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        let t = self.translation;
        Some(Self {
            linear: inv,
            translation: [
                -(inv[0][0] * t[0] + inv[0][1] * t[1]),
                -(inv[1][0] * t[0] + inv[1][1] * t[1]),
            ],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().flatten().chain(&self.translation).all(|v| v.is_finite())
    }

    /// Finite with determinant inside `[lo, hi]`.
    pub fn is_plausible(&self, det_range: (T, T)) -> bool {
        let d = self.determinant();
        self.is_finite() && d >= det_range.0 && d <= det_range.1
    }

    /// Largest absolute difference over the six parameters.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let a = self.linear.iter().flatten().chain(&self.translation);
        let b = other.linear.iter().flatten().chain(&other.translation);
        a.zip(b).map(|(x, y)| (*x - *y).abs()).fold(T::zero(), T::max)
    }

    pub fn to_f64(&self) -> AffineTransform<f64> {
        AffineTransform {
            linear: self.linear.map(|r| r.map(|v| v.as_f64())),
            translation: self.translation.map(|v| v.as_f64()),
        }
    }

    /// Exact affine through three correspondences; `None` if the source triangle is degenerate.
    pub fn from_three(src: [Point<T>; 3], dst: [Point<T>; 3], min_area: T) -> Option<Self> {
        let (ux, uy) = (src[1][0] - src[0][0], src[1][1] - src[0][1]);
        let (vx, vy) = (src[2][0] - src[0][0], src[2][1] - src[0][1]);
        let cross = ux * vy - uy * vx;
        if cross.abs() * T::lit(0.5) < min_area || cross == T::zero() {
            return None;
        }
        let (px, py) = (dst[1][0] - dst[0][0], dst[1][1] - dst[0][1]);
        let (qx, qy) = (dst[2][0] - dst[0][0], dst[2][1] - dst[0][1]);
        // [p q] = A [u v]  =>  A = [p q] [u v]^-1
        let inv = [[vy / cross, -vx / cross], [-uy / cross, ux / cross]];
        let a = [
            [px * inv[0][0] + qx * inv[1][0], px * inv[0][1] + qx * inv[1][1]],
            [py * inv[0][0] + qy * inv[1][0], py * inv[0][1] + qy * inv[1][1]],
        ];
        let t = [
            dst[0][0] - (a[0][0] * src[0][0] + a[0][1] * src[0][1]),
            dst[0][1] - (a[1][0] * src[0][0] + a[1][1] * src[0][1]),
        ];
        let out = Self {
            linear: a,
            translation: t,
        };
        out.is_finite().then_some(out)
    }

    /// Least-squares affine on centred coordinates; needs at least three non-collinear points.
    pub fn least_squares(src: &[Point<T>], dst: &[Point<T>]) -> Option<Self> {
        let n = src.len();
        if n < 3 || dst.len() != n {
            return None;
        }
        let nf = T::from_usize_lossy(n);
        let mean = |p: &[Point<T>]| {
            let s = p.iter().fold([T::zero(); 2], |acc, q| [acc[0] + q[0], acc[1] + q[1]]);
            [s[0] / nf, s[1] / nf]
        };
        let ms = mean(src);
        let md = mean(dst);
        let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
        let (mut sxu, mut syu, mut sxv, mut syv) = (T::zero(), T::zero(), T::zero(), T::zero());
        for (s, d) in src.iter().zip(dst) {
            let (x, y) = (s[0] - ms[0], s[1] - ms[1]);
            let (u, v) = (d[0] - md[0], d[1] - md[1]);
            sxx += x * x;
            sxy += x * y;
            syy += y * y;
            sxu += x * u;
            syu += y * u;
            sxv += x * v;
            syv += y * v;
        }
        let det = sxx * syy - sxy * sxy;
        let scale = (sxx + syy) * (sxx + syy);
        if !(det > scale * T::lit(1e-12)) {
            return None;
        }
        let a = [
            [(sxu * syy - syu * sxy) / det, (syu * sxx - sxu * sxy) / det],
            [(sxv * syy - syv * sxy) / det, (syv * sxx - sxv * sxy) / det],
        ];
        let t = [
            md[0] - (a[0][0] * ms[0] + a[0][1] * ms[1]),
            md[1] - (a[1][0] * ms[0] + a[1][1] * ms[1]),
        ];
        let out = Self {
            linear: a,
            translation: t,
        };
        out.is_finite().then_some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams<T> {
    pub iterations: usize,
    /// Inlier threshold on the forward mapping error, in pixels.
    pub tolerance: T,
    pub det_range: (T, T),
    /// Minimal samples spanning less than this triangle area (px^2) are resampled.
    pub min_sample_area: T,
    pub seed: u64,
}

impl<T: Real> Default for RansacParams<T> {
    fn default() -> Self {
        Self {
            iterations: 2000,
            tolerance: T::lit(3.0),
            det_range: (T::lit(0.25), T::lit(4.0)),
            min_sample_area: T::lit(1.0),
            seed: 0x5eed,
        }
    }
}

/// Minimum consensus for an accepted transform.
pub const MIN_INLIERS: usize = 4;
const RESAMPLE_LIMIT: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit<T> {
    pub transform: AffineTransform<T>,
    /// Indices into the correspondence list.
    pub inliers: Vec<usize>,
}

fn inliers_of<T: Real>(t: &AffineTransform<T>, src: &[Point<T>], dst: &[Point<T>], tol: T) -> (Vec<usize>, T) {
    let tol2 = tol * tol;
    let mut idx = Vec::new();
    let mut err = T::zero();
    for (k, (s, d)) in src.iter().zip(dst).enumerate() {
        let m = t.apply(*s);
        let e = (m[0] - d[0]) * (m[0] - d[0]) + (m[1] - d[1]) * (m[1] - d[1]);
        if e <= tol2 {
            idx.push(k);
            err += e;
        }
    }
    (idx, err)
}

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// RANSAC over point correspondences `src[k] -> dst[k]`.
pub fn ransac_points<T: Real>(
    src: &[Point<T>],
    dst: &[Point<T>],
    params: &RansacParams<T>,
) -> Option<RansacFit<T>> {
    let n = src.len();
    if n < MIN_INLIERS || dst.len() != n {
        return None;
    }
    struct Candidate<T> {
        count: usize,
        err: T,
        iteration: usize,
        transform: AffineTransform<T>,
    }
    let better = |a: &Candidate<T>, b: &Candidate<T>| {
        a.count > b.count
            || (a.count == b.count && (a.err < b.err || (a.err == b.err && a.iteration < b.iteration)))
    };

    let best = (0..params.iterations)
        .into_par_iter()
        .filter_map(|it| {
            let mut rng = iteration_rng(params.seed, it);
            for _ in 0..RESAMPLE_LIMIT {
                let a = rng.gen_range(0..n);
                let mut b = rng.gen_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                let mut c = rng.gen_range(0..n - 2);
                let (lo, hi) = (a.min(b), a.max(b));
                if c >= lo {
                    c += 1;
                }
                if c >= hi {
                    c += 1;
                }
                let Some(t) = AffineTransform::from_three(
                    [src[a], src[b], src[c]],
                    [dst[a], dst[b], dst[c]],
                    params.min_sample_area,
                ) else {
                    continue;
                };
                if !t.is_plausible(params.det_range) {
                    return None;
                }
                let (idx, err) = inliers_of(&t, src, dst, params.tolerance);
                return Some(Candidate {
                    count: idx.len(),
                    err,
                    iteration: it,
                    transform: t,
                });
            }
            None
        })
        .reduce_with(|a, b| if better(&b, &a) { b } else { a })?;

    if best.count < MIN_INLIERS {
        return None;
    }
    let mut transform = best.transform;
    let (mut inliers, _) = inliers_of(&transform, src, dst, params.tolerance);
    for _ in 0..2 {
        let s: Vec<_> = inliers.iter().map(|&k| src[k]).collect();
        let d: Vec<_> = inliers.iter().map(|&k| dst[k]).collect();
        let Some(refit) = AffineTransform::least_squares(&s, &d) else {
            break;
        };
        if !refit.is_plausible(params.det_range) {
            break;
        }
        let (next, _) = inliers_of(&refit, src, dst, params.tolerance);
        if next.len() < MIN_INLIERS {
            break;
        }
        transform = refit;
        if next == inliers {
            break;
        }
        inliers = next;
    }
    (inliers.len() >= MIN_INLIERS).then_some(RansacFit { transform, inliers })
}

fn kp_point<T: Real>(kp: &Keypoint<T>) -> Point<T> {
    [kp.x, kp.y]
}

/// RANSAC on matches oriented `i -> j`. Inlier indices refer to `pairs`.
pub fn ransac_affine<T: Real>(
    pairs: &[MatchPair<T>],
    kps: &[Keypoint<T>],
    params: &RansacParams<T>,
) -> Option<RansacFit<T>> {
    let src: Vec<_> = pairs.iter().map(|p| kp_point(&kps[p.i])).collect();
    let dst: Vec<_> = pairs.iter().map(|p| kp_point(&kps[p.j])).collect();
    ransac_points(&src, &dst, params)
}

/// A transform and the keypoint correspondences (`source -> target`) that support it.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedTransform<T> {
    pub transform: AffineTransform<T>,
    pub correspondences: Vec<(usize, usize)>,
}

impl<T: Real> LocalizedTransform<T> {
    fn refit(&mut self, kps: &[Keypoint<T>], det_range: (T, T)) {
        let s: Vec<_> = self.correspondences.iter().map(|&(a, _)| kp_point(&kps[a])).collect();
        let d: Vec<_> = self.correspondences.iter().map(|&(_, b)| kp_point(&kps[b])).collect();
        if let Some(t) = AffineTransform::least_squares(&s, &d) {
            if t.is_plausible(det_range) {
                self.transform = t;
            }
        }
    }

    /// Fraction of correspondences `(a, b)` for which `t` maps `b` back near `a` (`reversed`) or
    /// `a` near `b`.
    fn agreement(&self, t: &AffineTransform<T>, kps: &[Keypoint<T>], tol: T, reversed: bool) -> f64 {
        if self.correspondences.is_empty() {
            return 0.0;
        }
        let ok = self
            .correspondences
            .iter()
            .filter(|&&(a, b)| {
                let (from, to) = if reversed { (b, a) } else { (a, b) };
                let m = t.apply(kp_point(&kps[from]));
                let q = kp_point(&kps[to]);
                let dx = m[0] - q[0];
                let dy = m[1] - q[1];
                dx * dx + dy * dy <= tol * tol
            })
            .count();
        ok as f64 / self.correspondences.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeParams<T> {
    pub ransac: RansacParams<T>,
    pub max_transforms: usize,
}

impl<T: Real> Default for LocalizeParams<T> {
    fn default() -> Self {
        Self {
            ransac: RansacParams::default(),
            max_transforms: 8,
        }
    }
}

/// Repeated RANSAC with inlier removal. Matches consistent with an accepted transform in the
/// reverse direction are absorbed into it, and a later transform that is the inverse of an
/// earlier one is merged into it.
pub fn iterative_localize<T: Real>(
    pairs: &[MatchPair<T>],
    kps: &[Keypoint<T>],
    params: &LocalizeParams<T>,
) -> Vec<LocalizedTransform<T>> {
    let tol = params.ransac.tolerance;
    let det_range = params.ransac.det_range;
    let mut remaining: Vec<(usize, usize)> = pairs.iter().map(|p| (p.i, p.j)).collect();
    let mut found: Vec<LocalizedTransform<T>> = Vec::new();
    let mut round = 0u64;

    while remaining.len() >= MIN_INLIERS && found.len() < params.max_transforms {
        let src: Vec<_> = remaining.iter().map(|&(a, _)| kp_point(&kps[a])).collect();
        let dst: Vec<_> = remaining.iter().map(|&(_, b)| kp_point(&kps[b])).collect();
        let ransac = RansacParams {
            seed: params.ransac.seed.wrapping_add(round),
            ..params.ransac
        };
        round += 1;
        let Some(fit) = ransac_points(&src, &dst, &ransac) else {
            break;
        };
        let t = fit.transform;
        let mut used = vec![false; remaining.len()];
        let mut corr = Vec::new();
        for &k in &fit.inliers {
            used[k] = true;
            corr.push(remaining[k]);
        }
        for (k, &(a, b)) in remaining.iter().enumerate() {
            if used[k] {
                continue;
            }
            let m = t.apply(kp_point(&kps[b]));
            let q = kp_point(&kps[a]);
            if (m[0] - q[0]) * (m[0] - q[0]) + (m[1] - q[1]) * (m[1] - q[1]) <= tol * tol {
                used[k] = true;
                corr.push((b, a));
            }
        }
        remaining = remaining
            .iter()
            .zip(&used)
            .filter(|(_, &u)| !u)
            .map(|(&p, _)| p)
            .collect();

        let mut cand = LocalizedTransform {
            transform: t,
            correspondences: corr,
        };
        cand.refit(kps, det_range);

        let merged = found.iter_mut().find_map(|f| {
            if cand.agreement(&f.transform, kps, tol, true) >= 0.5 {
                Some((f, true))
            } else if cand.agreement(&f.transform, kps, tol, false) >= 0.5 {
                Some((f, false))
            } else {
                None
            }
        });
        match merged {
            Some((f, reversed)) => {
                f.correspondences.extend(
                    cand.correspondences
                        .iter()
                        .map(|&(a, b)| if reversed { (b, a) } else { (a, b) }),
                );
                f.correspondences.sort_unstable();
                f.correspondences.dedup();
                f.refit(kps, det_range);
            }
            None => found.push(cand),
        }
    }
    found
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    pub seed_radius: usize,
    /// Half-size of the correlation patch (3 gives 7x7).
    pub patch_radius: usize,
    pub zncc_threshold: f64,
    pub close_radius: usize,
    pub open_radius: usize,
    /// Minimum component and verdict area, as a fraction of the image's pixels.
    pub min_region_area_fraction: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            seed_radius: 8,
            patch_radius: 3,
            zncc_threshold: 0.5,
            close_radius: 4,
            open_radius: 2,
            min_region_area_fraction: 0.0005,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DetectionStats {
    pub keypoints: usize,
    pub dropped_keypoints: usize,
    pub matches: usize,
    pub comparisons: u64,
    pub groups: usize,
    pub inlier_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult<T> {
    /// Binary tamper mask at the original resolution.
    pub mask: Mask,
    pub transforms: Vec<AffineTransform<T>>,
    pub tampered: bool,
    pub stats: DetectionStats,
}

/// Zero-mean normalized cross-correlation of the patch around `p` and the patch warped through
/// `map`. `None` when either patch leaves the image or is flat.
pub fn zncc(gray: &GrayImage, map: &AffineTransform<f64>, x: usize, y: usize, radius: usize) -> Option<f64> {
    let (w, h) = (gray.width() as f64, gray.height() as f64);
    let r = radius as isize;
    if x < radius || y < radius || x + radius >= gray.width() || y + radius >= gray.height() {
        return None;
    }
    let n = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for dy in -r..=r {
        for dx in -r..=r {
            let px = (x as isize + dx) as usize;
            let py = (y as isize + dy) as usize;
            let a = f64::from(gray.get(px, py));
            let q = map.apply([px as f64, py as f64]);
            if q[0] < 0.0 || q[1] < 0.0 || q[0] > w - 1.0 || q[1] > h - 1.0 {
                return None;
            }
            let b = bilinear_u8(gray, q[0], q[1]);
            sa += a;
            sb += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
        }
    }
    let va = saa - sa * sa / n;
    let vb = sbb - sb * sb / n;
    if va <= 1e-9 || vb <= 1e-9 {
        return None;
    }
    Some((sab - sa * sb / n) / (va * vb).sqrt())
}

fn bilinear_u8(gray: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(gray.width() - 1);
    let y1 = (y0 + 1).min(gray.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let g = |xx, yy| f64::from(gray.get(xx, yy));
    (g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx) * (1.0 - fy) + (g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx) * fy
}

fn stamp_disc(mask: &mut Mask, cx: f64, cy: f64, radius: usize) {
    let r = radius as i64;
    let (ix, iy) = (cx.round() as i64, cy.round() as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let (x, y) = (ix + dx, iy + dy);
            if x >= 0 && y >= 0 && (x as usize) < mask.width() && (y as usize) < mask.height() {
                mask.set(x as usize, y as usize, true);
            }
        }
    }
}

/// Seeds at `points`, grown over 4-neighbours whose correlation under `map` exceeds the threshold.
pub fn grow_region(gray: &GrayImage, seeds: &[[f64; 2]], map: &AffineTransform<f64>, params: &MaskParams) -> Mask {
    let (w, h) = (gray.width(), gray.height());
    let mut mask = Mask::new(w, h);
    for s in seeds {
        stamp_disc(&mut mask, s[0], s[1], params.seed_radius);
    }
    // 0 = untested, 1 = rejected
    let mut rejected = vec![false; w * h];
    let mut queue: VecDeque<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .collect();
    while let Some((x, y)) = queue.pop_front() {
        let neighbours = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbours {
            if nx >= w || ny >= h || mask.get(nx, ny) || rejected[ny * w + nx] {
                continue;
            }
            match zncc(gray, map, nx, ny, params.patch_radius) {
                Some(c) if c > params.zncc_threshold => {
                    mask.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
                _ => rejected[ny * w + nx] = true,
            }
        }
    }
    mask
}

/// Row-wise half widths of a digital disc.
fn disc_half_widths(radius: usize) -> Vec<(isize, usize)> {
    let r = radius as isize;
    (-r..=r)
        .map(|dy| {
            let hw = ((radius * radius) as f64 - (dy * dy) as f64).sqrt().floor() as usize;
            (dy, hw)
        })
        .collect()
}

fn row_prefix(mask: &Mask) -> Vec<u32> {
    let w = mask.width();
    let mut p = vec![0u32; (w + 1) * mask.height()];
    for y in 0..mask.height() {
        for x in 0..w {
            p[y * (w + 1) + x + 1] = p[y * (w + 1) + x] + u32::from(mask.get(x, y));
        }
    }
    p
}

/// Binary dilation by a disc.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    morph(mask, radius, true)
}

/// Binary erosion by a disc; pixels outside the image do not constrain the result.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    morph(mask, radius, false)
}

fn morph(mask: &Mask, radius: usize, dilation: bool) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let prefix = row_prefix(mask);
    let rows = disc_half_widths(radius);
    let data: Vec<bool> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let prefix = &prefix;
            let rows = &rows;
            (0..w).map(move |x| {
                for &(dy, hw) in rows {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let lo = x.saturating_sub(hw);
                    let hi = (x + hw).min(w - 1);
                    let base = yy as usize * (w + 1);
                    let set = prefix[base + hi + 1] - prefix[base + lo];
                    if dilation && set > 0 {
                        return true;
                    }
                    if !dilation && set as usize != hi - lo + 1 {
                        return false;
                    }
                }
                !dilation
            })
        })
        .collect();
    Mask::from_vec(w, h, data)
}

/// 8-connected components as lists of pixel indices.
pub fn connected_components(mask: &Mask) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut k = 0;
        while k < comp.len() {
            let p = comp[k];
            k += 1;
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !seen[q] && mask.data()[q] {
                        seen[q] = true;
                        comp.push(q);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

pub fn remove_small_components(mask: &Mask, min_area: f64) -> Mask {
    let mut out = Mask::new(mask.width(), mask.height());
    for comp in connected_components(mask) {
        if comp.len() as f64 >= min_area {
            for p in comp {
                out.set(p % mask.width(), p / mask.width(), true);
            }
        }
    }
    out
}

/// Nearest-neighbour resampling to `width x height`.
pub fn resize_mask_nearest(mask: &Mask, width: usize, height: usize) -> Mask {
    let sx = mask.width() as f64 / width as f64;
    let sy = mask.height() as f64 / height as f64;
    let mut out = Mask::new(width, height);
    for y in 0..height {
        let yy = (((y as f64 + 0.5) * sy).floor() as usize).min(mask.height() - 1);
        for x in 0..width {
            let xx = (((x as f64 + 0.5) * sx).floor() as usize).min(mask.width() - 1);
            out.set(x, y, mask.get(xx, yy));
        }
    }
    out
}

/// Tamper mask in working resolution and at `original` resolution, plus the verdict.
pub fn build_mask<T: Real>(
    gray: &GrayImage,
    transforms: &[LocalizedTransform<T>],
    kps: &[Keypoint<T>],
    original: (usize, usize),
    params: &MaskParams,
) -> DetectionResult<T> {
    let (w, h) = (gray.width(), gray.height());
    let mut working = Mask::new(w, h);
    let pt = |k: usize| [kps[k].x.as_f64(), kps[k].y.as_f64()];
    for lt in transforms {
        let fwd = lt.transform.to_f64();
        let src: Vec<_> = lt.correspondences.iter().map(|&(a, _)| pt(a)).collect();
        working.union_with(&grow_region(gray, &src, &fwd, params));
        if let Some(inv) = fwd.inverse() {
            let dst: Vec<_> = lt.correspondences.iter().map(|&(_, b)| pt(b)).collect();
            working.union_with(&grow_region(gray, &dst, &inv, params));
        }
    }
    let closed = erode(&dilate(&working, params.close_radius), params.close_radius);
    let opened = dilate(&erode(&closed, params.open_radius), params.open_radius);
    let cleaned = remove_small_components(&opened, params.min_region_area_fraction * (w * h) as f64);
    let mask = resize_mask_nearest(&cleaned, original.0, original.1);
    let tampered = verdict(&mask, params.min_region_area_fraction);
    let stats = DetectionStats {
        inlier_counts: transforms.iter().map(|t| t.correspondences.len()).collect(),
        ..Default::default()
    };
    DetectionResult {
        mask,
        transforms: transforms.iter().map(|t| t.transform).collect(),
        tampered,
        stats,
    }
}

/// Tampered iff the mask area reaches the minimum region area.
pub fn verdict(mask: &Mask, min_region_area_fraction: f64) -> bool {
    let min_area = min_region_area_fraction * (mask.width() * mask.height()) as f64;
    mask.area() > 0 && mask.area() as f64 >= min_area
}
