//! Image decoding, grayscale conversion, bicubic resampling and PNG emission.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_gray(gray: &GrayImage) -> Self {
        let pixels = gray.pixels().iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            width: gray.width(),
            height: gray.height(),
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| encode_error(path, e))
    }
}

/// 8-bit single channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} bytes for {width}x{height} gray, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("positive dimensions")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels).expect("positive dimensions")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    #[inline]
    fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        f64::from(self.get(cx, cy))
    }

    /// Bicubic (Catmull-Rom, a = -0.5) sample at a real position, edge replicated, unclamped.
    pub fn sample_bicubic(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (ix, iy) = (x0 as isize, y0 as isize);
        let wx = cubic_weights(x - x0);
        let wy = cubic_weights(y - y0);
        let mut acc = 0.0;
        for (j, wyj) in wy.iter().enumerate() {
            let mut row = 0.0;
            for (i, wxi) in wx.iter().enumerate() {
                row += wxi * self.get_clamped(ix + i as isize - 1, iy + j as isize - 1);
            }
            acc += wyj * row;
        }
        acc
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| encode_error(path, e))
    }
}

/// Binary mask. Encoded on disk as an 8-bit PNG holding 0 and 255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask data length");
        Self {
            width,
            height,
            data,
        }
    }

    /// Pixels `>= threshold` are set.
    pub fn from_gray(gray: &GrayImage, threshold: u8) -> Self {
        Self {
            width: gray.width(),
            height: gray.height(),
            data: gray.pixels().iter().map(|&v| v >= threshold).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::new(
            self.width,
            self.height,
            self.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
        .expect("mask dimensions positive")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray().save_png(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_gray(&load_gray(path)?, 128))
    }
}

fn encode_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Encode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let format = image::guess_format(&bytes).map_err(|e| decode_err(e.to_string()))?;
    if !matches!(
        format,
        image::ImageFormat::Png | image::ImageFormat::Jpeg | image::ImageFormat::Bmp
    ) {
        return Err(decode_err(format!("unsupported format {format:?}")));
    }
    image::load_from_memory_with_format(&bytes, format).map_err(|e| decode_err(e.to_string()))
}

/// Decodes a PNG, JPEG or BMP file. Alpha is dropped.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let rgb = decode(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    RgbImage::new(w as usize, h as usize, rgb.into_raw())
}

/// Decodes directly to 8-bit luma using the decoder's own conversion (used for masks).
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let g = decode(path)?.to_luma8();
    let (w, h) = g.dimensions();
    GrayImage::new(w as usize, h as usize, g.into_raw())
}

/// ITU-R BT.601 luma, rounded half up.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let pixels = img
        .pixels()
        .chunks_exact(3)
        .map(|p| {
            let l = 299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2]);
            ((l + 500) / 1000).min(255) as u8
        })
        .collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("source dimensions valid")
}

/// Catmull-Rom weights for the taps at offsets -1, 0, 1, 2 from `floor(x)`, given `t = x - floor(x)`.
#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        cubic_kernel(1.0 + t),
        cubic_kernel(t),
        cubic_kernel(1.0 - t),
        cubic_kernel(2.0 - t),
    ]
}

#[inline]
fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Output size for a resize factor, rounded half up.
pub fn scaled_dimension(len: usize, s: f64) -> usize {
    (s * len as f64 + 0.5).floor().max(0.0) as usize
}

struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

fn axis_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let weight = cubic_weights(src - base);
            let b = base as isize;
            let mut index = [0usize; 4];
            for (k, idx) in index.iter_mut().enumerate() {
                *idx = (b + k as isize - 1).clamp(0, in_len as isize - 1) as usize;
            }
            Taps { index, weight }
        })
        .collect()
}

/// Pixel-center aligned bicubic resize with edge replication.
pub fn resize_bicubic(img: &GrayImage, s: f64) -> Result<GrayImage> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "resize factor must be positive, got {s}"
        )));
    }
    let out_w = scaled_dimension(img.width(), s);
    let out_h = scaled_dimension(img.height(), s);
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize factor {s} collapses {}x{} to {out_w}x{out_h}",
            img.width(),
            img.height()
        )));
    }
    resize_bicubic_to(img, out_w, out_h)
}

pub fn resize_bicubic_to(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument("output dimension would be 0".into()));
    }
    let (in_w, in_h) = (img.width(), img.height());
    let xt = axis_taps(in_w, out_w);
    let yt = axis_taps(in_h, out_h);

    let mut horiz = vec![0f64; out_w * in_h];
    horiz.par_chunks_mut(out_w).enumerate().for_each(|(y, row)| {
        let src = &img.pixels()[y * in_w..(y + 1) * in_w];
        for (out, t) in row.iter_mut().zip(&xt) {
            *out = (0..4).map(|k| t.weight[k] * f64::from(src[t.index[k]])).sum();
        }
    });

    let mut pixels = vec![0u8; out_w * out_h];
    pixels.par_chunks_mut(out_w).enumerate().for_each(|(y, row)| {
        let t = &yt[y];
        for (x, out) in row.iter_mut().enumerate() {
            let v: f64 = (0..4).map(|k| t.weight[k] * horiz[t.index[k] * out_w + x]).sum();
            *out = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
    });
    GrayImage::new(out_w, out_h, pixels)
}

/// Writes a 16-bit grayscale PNG.
pub fn save_gray16_png(path: &Path, width: usize, height: usize, data: Vec<u16>) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, data)
            .ok_or_else(|| Error::InvalidArgument("16-bit buffer length mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| encode_error(path, e))
}
