//! Diagnostic studies: keypoint density per block, entropy differences of matches, clustered
//! recall against brute force, and gradient contrast maps of the gray and entropy images.

use serde::Serialize;

use crate::config::{Config, DetectionSource};
use crate::descriptor::Descriptor;
use crate::entropy::{compute_entropy_map, ENTROPY_CEILING};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::image_io::{resize_bicubic, GrayImage, RgbImage};
use crate::matcher::{match_all_cached, ClusterParams, MatchMode, MatchPair, NeighborCache};
use crate::pipeline::detect_on_resized;
use crate::real::Real;
use crate::scale_space::Keypoint;

/// Fraction of the full `block x block` tiles of a `width x height` image holding at least four
/// of `points`. Partial tiles on the right and bottom edges are ignored.
pub fn assumption_ratio(points: &[[f64; 2]], width: usize, height: usize, block: usize) -> Result<f64> {
    if block == 0 {
        return Err(Error::InvalidArgument("block must be at least 1".into()));
    }
    let (tw, th) = (width / block, height / block);
    if tw == 0 || th == 0 {
        return Ok(0.0);
    }
    let mut counts = vec![0u32; tw * th];
    for p in points {
        if !(p[0] >= 0.0 && p[1] >= 0.0) {
            continue;
        }
        let (bx, by) = ((p[0] as usize) / block, (p[1] as usize) / block);
        if bx < tw && by < th {
            counts[by * tw + bx] += 1;
        }
    }
    Ok(counts.iter().filter(|&&c| c >= 4).count() as f64 / counts.len() as f64)
}

/// Keypoint positions in original-image coordinates for a resize factor `s`.
pub fn original_positions<T: Real>(kps: &[Keypoint<T>], s: f64) -> Vec<[f64; 2]> {
    kps.iter().map(|k| [k.x.as_f64() / s, k.y.as_f64() / s]).collect()
}

/// Keypoints found on `gray` with the detector running on `source`, in working coordinates.
pub fn detection_keypoints<T: Real>(gray: &GrayImage, config: &Config, source: DetectionSource) -> Result<Vec<Keypoint<T>>> {
    let cfg = Config {
        detection_source: source,
        ..config.clone()
    };
    cfg.validate()?;
    let resized = resize_bicubic(gray, cfg.resize_factor)?;
    let entropy = compute_entropy_map::<T>(&resized, cfg.entropy_radius)?;
    detect_on_resized(&resized, &entropy, &cfg)
}

/// Block ratio of the keypoints `source` detection yields on `gray`.
pub fn detection_ratio<T: Real>(gray: &GrayImage, config: &Config, source: DetectionSource, block: usize) -> Result<f64> {
    let kps = detection_keypoints::<T>(gray, config, source)?;
    assumption_ratio(
        &original_positions(&kps, config.resize_factor),
        gray.width(),
        gray.height(),
        block,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfTable {
    /// Sorted sample values.
    pub values: Vec<f64>,
    /// `fractions[k]` is the fraction of samples `<= values[k]`.
    pub fractions: Vec<f64>,
}

impl CdfTable {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        let mut values = Vec::new();
        let mut fractions = Vec::new();
        for (k, &v) in samples.iter().enumerate() {
            if samples.get(k + 1) == Some(&v) {
                continue;
            }
            values.push(v);
            fractions.push((k + 1) as f64 / n);
        }
        Ok(Self { values, fractions })
    }

    /// Fraction of samples `<= x`.
    pub fn at(&self, x: f64) -> f64 {
        match self.values.partition_point(|&v| v <= x) {
            0 => 0.0,
            k => self.fractions[k - 1],
        }
    }
}

/// Distribution of `|entropy_i - entropy_j|` over `matches`.
pub fn entropy_diff_cdf<T: Real>(matches: &[MatchPair<T>], kps: &[Keypoint<T>]) -> Result<CdfTable> {
    if matches.is_empty() {
        return Err(Error::InvalidArgument("empty match set".into()));
    }
    CdfTable::from_samples(
        matches
            .iter()
            .map(|m| (kps[m.i].entropy_value - kps[m.j].entropy_value).abs().as_f64())
            .collect(),
    )
}

/// `step4` values from 0 to `max` inclusive.
pub fn step4_sweep(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallCurve {
    pub brute_force_matches: usize,
    /// `(step4, recall)` pairs.
    pub points: Vec<(f64, f64)>,
}

impl RecallCurve {
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 >= w[0].1)
    }
}

/// Neighbour depth cached for sweeps; deeper scans fall back to direct evaluation.
const SWEEP_CACHE_DEPTH: usize = 128;

/// `|clustered ∩ brute force| / |brute force|` for each `step4`.
pub fn recall_vs_bruteforce<T: Real>(
    kps: &[Keypoint<T>],
    descriptors: &[Descriptor<T>],
    config: &Config,
    step4_values: &[f64],
) -> Result<RecallCurve> {
    let params = config.match_params::<T>();
    let base = config.cluster_params();
    let cache = NeighborCache::new(descriptors, SWEEP_CACHE_DEPTH);
    let brute = match_all_cached(kps, descriptors, &cache, &base, &params, MatchMode::BruteForce)?.pairs;
    if brute.is_empty() {
        return Err(Error::InvalidArgument("brute force matching found no matches".into()));
    }
    let key = |p: &MatchPair<T>| (p.i, p.j);
    let truth: std::collections::HashSet<_> = brute.iter().map(key).collect();
    let points = step4_values
        .iter()
        .map(|&step4| {
            let cluster = ClusterParams { step4, ..base };
            let pairs = match_all_cached(kps, descriptors, &cache, &cluster, &params, MatchMode::Clustered)?.pairs;
            let hit = pairs.iter().filter(|p| truth.contains(&key(p))).count();
            Ok((step4, hit as f64 / truth.len() as f64))
        })
        .collect::<Result<_>>()?;
    Ok(RecallCurve {
        brute_force_matches: truth.len(),
        points,
    })
}

/// Central-difference gradient magnitude, min-max normalized to [0, 1]; constant input gives zeros.
pub fn normalized_gradient<T: Real>(f: &Field<T>) -> Field<f64> {
    let (w, h) = (f.width(), f.height());
    let g = |x: isize, y: isize| f.get_clamped(x, y).as_f64();
    let mut mag = Field::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let gx = (g(x + 1, y) - g(x - 1, y)) / 2.0;
        let gy = (g(x, y + 1) - g(x, y - 1)) / 2.0;
        gx.hypot(gy)
    });
    let (lo, hi) = mag.min_max();
    let span = hi - lo;
    for v in mag.data_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    mag
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMaps {
    pub gray: Field<f64>,
    pub entropy: Field<f64>,
}

impl ContrastMaps {
    /// Fractions of pixels above `threshold` in the gray and entropy maps.
    pub fn coverage(&self, threshold: f64) -> (f64, f64) {
        let frac = |f: &Field<f64>| f.data().iter().filter(|&&v| v > threshold).count() as f64 / f.data().len() as f64;
        (frac(&self.gray), frac(&self.entropy))
    }
}

/// Gradient maps of the gray image (scaled to [0, 1]) and of its entropy map (scaled by 1/7).
pub fn contrast_maps(gray: &GrayImage, radius: usize) -> Result<ContrastMaps> {
    let g = Field::new(
        gray.width(),
        gray.height(),
        gray.pixels().iter().map(|&v| f64::from(v) / 255.0).collect(),
    );
    let e = compute_entropy_map::<f64>(gray, radius)?.field().map(|v| v / ENTROPY_CEILING);
    Ok(ContrastMaps {
        gray: normalized_gradient(&g),
        entropy: normalized_gradient(&e),
    })
}

/// Blue-cyan-yellow-red ramp over [0, 1].
pub fn pseudo_color(f: &Field<f64>) -> RgbImage {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [0.0, 0.0, 128.0]),
        (0.25, [0.0, 64.0, 255.0]),
        (0.5, [0.0, 255.0, 255.0]),
        (0.75, [255.0, 255.0, 0.0]),
        (1.0, [255.0, 0.0, 0.0]),
    ];
    let mut px = Vec::with_capacity(f.data().len() * 3);
    for &v in f.data() {
        let v = v.clamp(0.0, 1.0);
        let k = STOPS.iter().position(|s| s.0 >= v).unwrap_or(4).max(1);
        let (a, b) = (STOPS[k - 1], STOPS[k]);
        let t = (v - a.0) / (b.0 - a.0);
        for c in 0..3 {
            px.push((a.1[c] + t * (b.1[c] - a.1[c])).round() as u8);
        }
    }
    RgbImage::new(f.width(), f.height(), px).expect("dimensions match")
}
