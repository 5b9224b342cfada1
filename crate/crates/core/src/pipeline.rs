//! End-to-end detection: pre-processing, matching, localization, and on-disk artifacts.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{Config, DetectionSource};
use crate::descriptor::{attach_values, orient_and_describe, Descriptor};
use crate::entropy::{compute_entropy_map, EntropyMap, ENTROPY_CEILING};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::image_io::{load_image, resize_bicubic, save_gray16_png, to_grayscale, GrayImage, Mask, RgbImage};
use crate::localization::{build_mask, iterative_localize, AffineTransform, DetectionResult, LocalizedTransform};
use crate::matcher::{match_all, MatchOutcome, MatchPair};
use crate::real::Real;
use crate::scale_space::{build_dog, build_gaussian_pyramid, detect_keypoints, Keypoint};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub preprocess: f64,
    pub keypoints: f64,
    pub descriptors: f64,
    pub matching: f64,
    pub localization: f64,
    pub total: f64,
}

/// Everything produced before matching.
#[derive(Debug, Clone)]
pub struct Features<T> {
    /// Resized gray image.
    pub gray: GrayImage,
    pub entropy: EntropyMap<T>,
    pub keypoints: Vec<Keypoint<T>>,
    pub descriptors: Vec<Descriptor<T>>,
    pub dropped_keypoints: usize,
}

#[derive(Debug, Clone)]
pub struct Detection<T> {
    pub result: DetectionResult<T>,
    pub features: Features<T>,
    pub matches: Vec<MatchPair<T>>,
    pub localized: Vec<LocalizedTransform<T>>,
    pub original_size: (usize, usize),
    pub timings: Timings,
}

impl<T: Real> Detection<T> {
    pub fn tampered(&self) -> bool {
        self.result.tampered
    }

    pub fn mask(&self) -> &Mask {
        &self.result.mask
    }
}

fn field_from_gray<T: Real>(gray: &GrayImage) -> Field<T> {
    let inv = T::lit(1.0 / 255.0);
    Field::new(
        gray.width(),
        gray.height(),
        gray.pixels().iter().map(|&v| T::lit(f64::from(v)) * inv).collect(),
    )
}

/// Keypoints on the detection field of an already resized gray image.
pub fn detect_on_resized<T: Real>(gray: &GrayImage, entropy: &EntropyMap<T>, config: &Config) -> Result<Vec<Keypoint<T>>> {
    let source = match config.detection_source {
        DetectionSource::Entropy => {
            let inv = T::lit(1.0 / ENTROPY_CEILING);
            entropy.field().map(|v| v * inv)
        }
        DetectionSource::Gray => field_from_gray(gray),
    };
    let params = config.detector_params::<T>();
    let pyr = build_gaussian_pyramid(&source, params.sigma0, params.scales_per_octave, params.octaves)
        .map_err(|e| e.at("keypoints"))?;
    Ok(detect_keypoints(&build_dog(&pyr), &params))
}

/// Pre-processing: resize, entropy map, keypoints on the detection field, descriptors on gray.
pub fn extract_features<T: Real>(gray: &GrayImage, config: &Config, timings: &mut Timings) -> Result<Features<T>> {
    config.validate()?;
    let t0 = Instant::now();
    let resized = resize_bicubic(gray, config.resize_factor).map_err(|e| e.at("resize"))?;
    let entropy = compute_entropy_map::<T>(&resized, config.entropy_radius).map_err(|e| e.at("entropy"))?;
    timings.preprocess = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let raw = detect_on_resized(&resized, &entropy, config)?;
    let (mut keypoints, dropped_keypoints) = attach_values(raw, &resized, &entropy);
    timings.keypoints = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let params = config.detector_params::<T>();
    let gray_pyr = build_gaussian_pyramid(
        &field_from_gray::<T>(&resized),
        params.sigma0,
        params.scales_per_octave,
        params.octaves,
    )
    .map_err(|e| e.at("descriptors"))?;
    let descriptors = orient_and_describe(&gray_pyr, &mut keypoints);
    timings.descriptors = t2.elapsed().as_secs_f64();
    Ok(Features {
        gray: resized,
        entropy,
        keypoints,
        descriptors,
        dropped_keypoints,
    })
}

pub fn match_features<T: Real>(features: &Features<T>, config: &Config) -> Result<MatchOutcome<T>> {
    match_all(
        &features.keypoints,
        &features.descriptors,
        &config.cluster_params(),
        &config.match_params(),
        config.matching,
    )
    .map_err(|e| e.at("matching"))
}

pub fn detect_gray<T: Real>(gray: &GrayImage, config: &Config) -> Result<Detection<T>> {
    let start = Instant::now();
    let mut timings = Timings::default();
    let features = extract_features::<T>(gray, config, &mut timings)?;

    let t = Instant::now();
    let outcome = match_features(&features, config)?;
    timings.matching = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let localized = iterative_localize(&outcome.pairs, &features.keypoints, &config.localize_params());
    let mut result = build_mask(
        &features.gray,
        &localized,
        &features.keypoints,
        (gray.width(), gray.height()),
        &config.mask_params(),
    );
    timings.localization = t.elapsed().as_secs_f64();
    timings.total = start.elapsed().as_secs_f64();

    result.stats.keypoints = features.keypoints.len();
    result.stats.dropped_keypoints = features.dropped_keypoints;
    result.stats.matches = outcome.pairs.len();
    result.stats.comparisons = outcome.comparisons;
    result.stats.groups = outcome.groups;
    log::info!(
        "{} keypoints, {} matches, {} transforms, tampered={}",
        result.stats.keypoints,
        result.stats.matches,
        localized.len(),
        result.tampered
    );
    Ok(Detection {
        result,
        features,
        matches: outcome.pairs,
        localized,
        original_size: (gray.width(), gray.height()),
        timings,
    })
}

pub fn detect<T: Real>(img: &RgbImage, config: &Config) -> Result<Detection<T>> {
    detect_gray(&to_grayscale(img), config)
}

pub fn detect_path<T: Real>(path: &Path, config: &Config) -> Result<Detection<T>> {
    let img = load_image(path).map_err(|e| e.at("load"))?;
    detect(&img, config)
}

#[derive(Debug, Serialize)]
struct TransformRecord {
    linear: [[f64; 2]; 2],
    translation: [f64; 2],
}

impl<T: Real> From<&AffineTransform<T>> for TransformRecord {
    fn from(t: &AffineTransform<T>) -> Self {
        let t = t.to_f64();
        Self {
            linear: t.linear,
            translation: t.translation,
        }
    }
}

/// JSON record of a detection. `timings` is the only field that varies between identical runs.
pub fn detection_json<T: Real>(d: &Detection<T>) -> serde_json::Value {
    let transforms: Vec<TransformRecord> = d.result.transforms.iter().map(Into::into).collect();
    serde_json::json!({
        "verdict": if d.tampered() { "tampered" } else { "clean" },
        "tampered": d.tampered(),
        "width": d.original_size.0,
        "height": d.original_size.1,
        "mask_area": d.result.mask.area(),
        "transforms": transforms,
        "inlier_counts": d.result.stats.inlier_counts,
        "stats": d.result.stats,
        "timings": d.timings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactPaths {
    pub mask: PathBuf,
    pub overlay: PathBuf,
    pub json: PathBuf,
}

fn draw_line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: [u8; 3]) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
            img.put(x as usize, y as usize, color);
        }
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Original image with match lines and the mask contour drawn on top.
pub fn render_overlay<T: Real>(img: &RgbImage, d: &Detection<T>) -> RgbImage {
    let mut out = img.clone();
    let s = d.features.gray.width() as f64 / img.width() as f64;
    let kps = &d.features.keypoints;
    let to_orig = |k: &Keypoint<T>| ((k.x.as_f64() / s).round() as i64, (k.y.as_f64() / s).round() as i64);
    for m in &d.matches {
        draw_line(&mut out, to_orig(&kps[m.i]), to_orig(&kps[m.j]), [255, 220, 0]);
    }
    let mask = &d.result.mask;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == mask.width()
                || y + 1 == mask.height()
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            if edge {
                out.put(x, y, [255, 0, 0]);
            }
        }
    }
    out
}

/// Writes `<stem>_mask.png`, `<stem>_overlay.png` and `<stem>.json` into `out_dir`.
pub fn write_artifacts<T: Real>(img: &RgbImage, d: &Detection<T>, out_dir: &Path, stem: &str) -> Result<ArtifactPaths> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = ArtifactPaths {
        mask: out_dir.join(format!("{stem}_mask.png")),
        overlay: out_dir.join(format!("{stem}_overlay.png")),
        json: out_dir.join(format!("{stem}.json")),
    };
    d.result.mask.save_png(&paths.mask)?;
    render_overlay(img, d).save_png(&paths.overlay)?;
    let text = serde_json::to_string_pretty(&detection_json(d)).map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(&paths.json, text).map_err(|e| Error::io(&paths.json, e))?;
    Ok(paths)
}

/// `x1,y1,x2,y2,distance` in working-resolution coordinates.
pub fn write_matches_csv<T: Real>(path: &Path, d: &Detection<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    w.write_record(["x1", "y1", "x2", "y2", "distance"])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    let kps = &d.features.keypoints;
    for m in &d.matches {
        let (a, b) = (&kps[m.i], &kps[m.j]);
        w.write_record([
            a.x.to_string(),
            a.y.to_string(),
            b.x.to_string(),
            b.y.to_string(),
            m.distance.to_string(),
        ])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `x,y,sigma,theta,gray,entropy` per keypoint.
pub fn write_keypoints_csv<T: Real>(path: &Path, kps: &[Keypoint<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    w.write_record(["x", "y", "sigma", "theta", "gray", "entropy"])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for k in kps {
        w.write_record([
            k.x.to_string(),
            k.y.to_string(),
            k.sigma.to_string(),
            k.theta.to_string(),
            k.gray_value.to_string(),
            k.entropy_value.to_string(),
        ])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// 16-bit PNG with `round(entropy / 7 * 65535)`.
pub fn write_entropy_png<T: Real>(path: &Path, map: &EntropyMap<T>) -> Result<()> {
    save_gray16_png(path, map.width(), map.height(), map.to_u16())
}

/// Writes text to `path`, creating parent directories.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{forge, synthetic_texture, ForgeSpec, Rect};

    #[test]
    fn pristine_texture_is_clean() {
        let img = RgbImage::from_gray(&synthetic_texture(192, 192, 4));
        let d = detect::<f32>(&img, &Config::default()).unwrap();
        assert!(!d.tampered());
        assert_eq!(d.mask().area(), 0);
        assert_eq!((d.mask().width(), d.mask().height()), (192, 192));
    }

    #[test]
    fn translated_clone_is_found() {
        let img = RgbImage::from_gray(&synthetic_texture(256, 256, 8));
        let f = forge(&img, &ForgeSpec::translation(Rect::new(24, 24, 64, 64), 128.0, 96.0)).unwrap();
        let d = detect::<f32>(&f.image, &Config::default()).unwrap();
        assert!(d.tampered());
        assert!(d.mask().area() > 0);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let img = RgbImage::from_gray(&synthetic_texture(256, 256, 8));
        let f = forge(&img, &ForgeSpec::translation(Rect::new(24, 24, 64, 64), 128.0, 96.0)).unwrap();
        let a = detect::<f32>(&f.image, &Config::default()).unwrap();
        let b = detect::<f32>(&f.image, &Config::default()).unwrap();
        assert_eq!(a.result.mask, b.result.mask);
        let strip = |mut v: serde_json::Value| {
            v.as_object_mut().unwrap().remove("timings");
            v
        };
        assert_eq!(strip(detection_json(&a)), strip(detection_json(&b)));
    }

    #[test]
    fn load_failure_is_stage_tagged() {
        let err = detect_path::<f32>(Path::new("/nonexistent/x.png"), &Config::default()).unwrap_err();
        assert!(err.to_string().starts_with("load:"), "{err}");
    }
}
