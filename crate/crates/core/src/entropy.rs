//! Local Shannon entropy of the gray-level histogram in a square window.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::image_io::GrayImage;
use crate::real::{round_half_up, Real};

/// Ceiling used when entropy values are normalized or clustered.
pub const ENTROPY_CEILING: f64 = 7.0;

/// Per-pixel entropy in bits, same geometry as the source gray image.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap<T> {
    radius: usize,
    values: Field<T>,
}

/// Largest attainable entropy for a window of radius `radius`: `log2((2r + 1)^2)`.
pub fn max_entropy(radius: usize) -> f64 {
    let side = (2 * radius + 1) as f64;
    (side * side).log2()
}

impl<T: Real> EntropyMap<T> {
    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn field(&self) -> &Field<T> {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.values.get(x, y)
    }

    /// Entropy at the nearest pixel (round half up).
    pub fn sample(&self, x: T, y: T) -> Result<T> {
        let (ix, iy) = (round_half_up(x), round_half_up(y));
        if ix < 0 || iy < 0 || ix >= self.width() as i64 || iy >= self.height() as i64 {
            return Err(Error::OutOfBounds {
                x: x.as_f64(),
                y: y.as_f64(),
                width: self.width(),
                height: self.height(),
            });
        }
        Ok(self.values.get(ix as usize, iy as usize))
    }

    /// Field scaled into [0, 1] by the clustering ceiling of 7 bits.
    pub fn normalized(&self) -> Field<T> {
        let c = T::lit(ENTROPY_CEILING);
        self.values.map(|v| v / c)
    }

    /// 16-bit encoding `round(entropy / 7 * 65535)`.
    pub fn to_u16(&self) -> Vec<u16> {
        self.values
            .data()
            .iter()
            .map(|&v| {
                let q = (v.as_f64() / ENTROPY_CEILING * 65535.0 + 0.5).floor();
                q.clamp(0.0, 65535.0) as u16
            })
            .collect()
    }
}

/// Free-function form of [`EntropyMap::sample`].
pub fn sample_entropy<T: Real>(map: &EntropyMap<T>, x: T, y: T) -> Result<T> {
    map.sample(x, y)
}

/// Sliding-histogram entropy map. Windows are clipped at the border and the probabilities
/// renormalize over the pixels present. Cost is `O(width * height * radius)`.
pub fn compute_entropy_map<T: Real>(img: &GrayImage, radius: usize) -> Result<EntropyMap<T>> {
    if radius == 0 {
        return Err(Error::InvalidArgument("entropy radius must be >= 1".into()));
    }
    let (w, h) = (img.width(), img.height());
    let side = 2 * radius + 1;
    // n * log2(n) for every possible bin count
    let nlogn: Vec<f64> = (0..=side * side)
        .map(|n| if n == 0 { 0.0 } else { n as f64 * (n as f64).log2() })
        .collect();
    let px = img.pixels();

    let mut out = vec![T::zero(); w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius).min(h - 1);
        let rows = y1 - y0 + 1;
        let mut hist = [0u32; 256];
        // running sum of n_i * log2(n_i) over the histogram
        let mut s = 0.0f64;
        let mut count = 0usize;
        let mut distinct = 0usize;

        let add_column = |hist: &mut [u32; 256], s: &mut f64, distinct: &mut usize, x: usize, sign: i32| {
            for yy in y0..=y1 {
                let b = px[yy * w + x] as usize;
                let n = hist[b] as usize;
                if sign > 0 {
                    *s += nlogn[n + 1] - nlogn[n];
                    hist[b] += 1;
                    *distinct += usize::from(n == 0);
                } else {
                    *s += nlogn[n - 1] - nlogn[n];
                    hist[b] -= 1;
                    *distinct -= usize::from(n == 1);
                }
            }
        };

        for x in 0..=radius.min(w - 1) {
            add_column(&mut hist, &mut s, &mut distinct, x, 1);
            count += rows;
        }
        for (x, out) in row.iter_mut().enumerate() {
            if x > 0 {
                if x > radius {
                    add_column(&mut hist, &mut s, &mut distinct, x - radius - 1, -1);
                    count -= rows;
                }
                let incoming = x + radius;
                if incoming < w {
                    add_column(&mut hist, &mut s, &mut distinct, incoming, 1);
                    count += rows;
                }
            }
            let n = count as f64;
            // H = log2(N) - (1/N) sum n_i log2 n_i
            let e = if distinct <= 1 { 0.0 } else { (n.log2() - s / n).max(0.0) };
            *out = T::lit(e);
        }
    });
    Ok(EntropyMap {
        radius,
        values: Field::new(w, h, out),
    })
}
