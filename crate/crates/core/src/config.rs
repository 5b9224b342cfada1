//! Detector configuration and its flat `key = value` file form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localization::{LocalizeParams, MaskParams, RansacParams};
use crate::matcher::{ClusterParams, MatchMode, MatchParams};
use crate::real::Real;
use crate::scale_space::DetectorParams;

/// Field the DoG detector runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionSource {
    #[default]
    Entropy,
    Gray,
}

impl std::str::FromStr for DetectionSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(Self::Entropy),
            "gray" => Ok(Self::Gray),
            _ => Err(Error::Config(format!("unknown detection source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub resize_factor: f64,
    pub entropy_radius: usize,
    pub detection_source: DetectionSource,
    pub contrast_threshold: f64,
    pub sigma0: f64,
    pub scales_per_octave: usize,
    /// 0 builds every octave that stays at least 16x16.
    pub octaves: usize,
    pub edge_test: bool,
    pub edge_ratio: f64,
    pub step1: u32,
    pub step2: u32,
    pub step3: f64,
    pub step4: f64,
    pub matching: MatchMode,
    pub ratio: f64,
    pub exhaustive_g2nn: bool,
    pub min_spatial_distance: f64,
    pub ransac_iters: usize,
    pub ransac_tol: f64,
    pub ransac_seed: u64,
    pub max_transforms: usize,
    pub seed_radius: usize,
    pub zncc_patch_radius: usize,
    pub zncc_threshold: f64,
    pub close_radius: usize,
    pub open_radius: usize,
    pub min_region_area_fraction: f64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            resize_factor: 2.0,
            entropy_radius: 3,
            detection_source: DetectionSource::Entropy,
            contrast_threshold: 0.01,
            sigma0: 1.6,
            scales_per_octave: 3,
            octaves: 0,
            edge_test: true,
            edge_ratio: 10.0,
            step1: 50,
            step2: 10,
            step3: 1.0,
            step4: 0.0,
            matching: MatchMode::Clustered,
            ratio: 0.5,
            exhaustive_g2nn: false,
            min_spatial_distance: 10.0,
            ransac_iters: 2000,
            ransac_tol: 3.0,
            ransac_seed: 0x5eed,
            max_transforms: 8,
            seed_radius: 8,
            zncc_patch_radius: 3,
            zncc_threshold: 0.5,
            close_radius: 4,
            open_radius: 2,
            min_region_area_fraction: 0.0005,
            threads: 0,
        }
    }
}

const DOCS: &[(&str, &str)] = &[
    ("resize_factor", "bicubic upsampling factor s applied before everything else"),
    ("entropy_radius", "entropy window half-size R_E; the window is (2R_E+1)^2"),
    ("detection_source", "entropy | gray; gray runs the detector on the gray image instead"),
    ("contrast_threshold", "DoG contrast threshold on the [0,1] detection field"),
    ("sigma0", "base scale of the Gaussian pyramid"),
    ("scales_per_octave", "DoG intervals per octave"),
    ("octaves", "octave count, 0 = as many as stay at least 16x16"),
    ("edge_test", "reject edge-like extrema"),
    ("edge_ratio", "principal curvature ratio bound for the edge test"),
    ("step1", "gray interval size"),
    ("step2", "gray interval overlap"),
    ("step3", "entropy interval size (bits)"),
    ("step4", "entropy interval overlap (bits)"),
    ("matching", "clustered | gray-only | brute-force"),
    ("ratio", "g2NN ratio T"),
    ("exhaustive_g2nn", "test every neighbour instead of stopping at the first failure"),
    ("min_spatial_distance", "minimum distance between matched keypoints (working pixels)"),
    ("ransac_iters", "RANSAC trials per hypothesis"),
    ("ransac_tol", "RANSAC inlier tolerance (working pixels)"),
    ("ransac_seed", "RANSAC random seed"),
    ("max_transforms", "maximum number of accepted transforms"),
    ("seed_radius", "radius of the discs seeded around inliers"),
    ("zncc_patch_radius", "correlation patch half-size"),
    ("zncc_threshold", "region growing correlation threshold"),
    ("close_radius", "closing disc radius"),
    ("open_radius", "opening disc radius"),
    ("min_region_area_fraction", "minimum region area as a fraction of the image"),
    ("threads", "worker threads, 0 = all cores"),
];

impl Config {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.resize_factor > 0.0 && self.resize_factor.is_finite()) {
            return fail("resize_factor must be positive");
        }
        if self.entropy_radius < 1 {
            return fail("entropy_radius must be at least 1");
        }
        if self.step1 <= self.step2 {
            return fail("step1 must exceed step2");
        }
        if !(self.step3 > 0.0 && self.step3.is_finite()) {
            return fail("step3 must be positive");
        }
        if !(self.step4 >= 0.0 && self.step4.is_finite()) {
            return fail("step4 must be non-negative");
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return fail("ratio must lie in (0, 1)");
        }
        if !(self.sigma0 > 0.0) || self.scales_per_octave == 0 {
            return fail("sigma0 and scales_per_octave must be positive");
        }
        if self.edge_test && !(self.edge_ratio > 1.0) {
            return fail("edge_ratio must exceed 1");
        }
        if !(self.contrast_threshold >= 0.0) || !(self.min_spatial_distance >= 0.0) {
            return fail("contrast_threshold and min_spatial_distance must be non-negative");
        }
        if !(self.ransac_tol > 0.0) || self.ransac_iters == 0 {
            return fail("ransac_tol and ransac_iters must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_region_area_fraction) {
            return fail("min_region_area_fraction must lie in [0, 1]");
        }
        if !(-1.0..=1.0).contains(&self.zncc_threshold) {
            return fail("zncc_threshold must lie in [-1, 1]");
        }
        if self.ransac_seed > i64::MAX as u64 {
            return fail("ransac_seed must fit in 63 bits");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with a one-line comment above it.
    pub fn to_toml_string(&self) -> Result<String> {
        let plain = toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))?;
        let mut out = String::new();
        for line in plain.lines() {
            let key = line.split('=').next().unwrap_or("").trim();
            if let Some((_, doc)) = DOCS.iter().find(|(k, _)| *k == key) {
                let _ = writeln!(out, "# {doc}");
            }
            let _ = writeln!(out, "{line}");
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn detector_params<T: Real>(&self) -> DetectorParams<T> {
        DetectorParams {
            sigma0: T::lit(self.sigma0),
            scales_per_octave: self.scales_per_octave,
            octaves: (self.octaves > 0).then_some(self.octaves),
            contrast_threshold: T::lit(self.contrast_threshold),
            edge_ratio: self.edge_test.then(|| T::lit(self.edge_ratio)),
        }
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            step1: self.step1,
            step2: self.step2,
            step3: self.step3,
            step4: self.step4,
        }
    }

    pub fn match_params<T: Real>(&self) -> MatchParams<T> {
        MatchParams {
            ratio: T::lit(self.ratio),
            min_spatial_distance: T::lit(self.min_spatial_distance),
            exhaustive: self.exhaustive_g2nn,
        }
    }

    pub fn localize_params<T: Real>(&self) -> LocalizeParams<T> {
        LocalizeParams {
            ransac: RansacParams {
                iterations: self.ransac_iters,
                tolerance: T::lit(self.ransac_tol),
                seed: self.ransac_seed,
                ..RansacParams::default()
            },
            max_transforms: self.max_transforms,
        }
    }

    pub fn mask_params(&self) -> MaskParams {
        MaskParams {
            seed_radius: self.seed_radius,
            patch_radius: self.zncc_patch_radius,
            zncc_threshold: self.zncc_threshold,
            close_radius: self.close_radius,
            open_radius: self.open_radius,
            min_region_area_fraction: self.min_region_area_fraction,
        }
    }
}
