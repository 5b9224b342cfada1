//! Copy-move forgery detection driven by local-entropy keypoints.
//!
//! The detector runs in three stages:
//!
//! 1. **Pre-processing.** The gray image is upsampled with bicubic interpolation, its local
//!    Shannon entropy map is computed, and a DoG detector on the entropy map yields keypoint
//!    positions and scales. Orientation and the 128-d descriptor are then taken from the gray
//!    image at those positions.
//! 2. **Matching.** Keypoints are grouped by overlapping gray-level intervals and, inside each,
//!    by overlapping entropy-level intervals. The g2NN ratio test runs inside every group.
//! 3. **Localization.** Iterative RANSAC turns matches into affine hypotheses, which are grown
//!    into a tamper mask by correlation-driven region growing.
//!
//! All real-valued stages are generic over [`Real`] (`f32` or `f64`).

pub mod analysis;
pub mod config;
pub mod descriptor;
pub mod entropy;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod forge;
pub mod image_io;
pub mod localization;
pub mod matcher;
pub mod pipeline;
pub mod real;
pub mod scale_space;

pub use config::{Config, DetectionSource};
pub use error::{Error, Result};
pub use image_io::{GrayImage, Mask, RgbImage};
pub use real::Real;

/// Scalar used by the command line tools and the benchmark harness.
pub type DefaultReal = f32;

pub type Field32 = field::Field<f32>;
pub type Field64 = field::Field<f64>;
pub type EntropyMap32 = entropy::EntropyMap<f32>;
pub type EntropyMap64 = entropy::EntropyMap<f64>;
pub type Keypoint32 = scale_space::Keypoint<f32>;
pub type Keypoint64 = scale_space::Keypoint<f64>;
pub type Descriptor32 = descriptor::Descriptor<f32>;
pub type Descriptor64 = descriptor::Descriptor<f64>;
pub type Affine32 = localization::AffineTransform<f32>;
pub type Affine64 = localization::AffineTransform<f64>;
pub type Detection32 = pipeline::Detection<f32>;
pub type Detection64 = pipeline::Detection<f64>;
