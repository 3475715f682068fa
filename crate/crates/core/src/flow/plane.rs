//! Internal f64 raster plus the filtering and resampling the estimators need.

use rayon::prelude::*;

use crate::types::Frame;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Reflect-101 index mapping: `-1 -> 1`, `n -> n - 2`.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Unnormalized Gaussian samples `exp(-t^2 / 2 sigma^2)` for `t` in `[-radius, radius]`.
pub(crate) fn gaussian_weights(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

pub(crate) fn normalized_gaussian(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k = gaussian_weights(sigma, radius);
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            width: frame.width(),
            height: frame.height(),
            data: frame.data().iter().map(|&v| v as f64).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with coordinates clamped to the image.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Horizontal correlation with `kernel` (odd length), reflect-101 borders.
    pub fn filter_rows(&self, kernel: &[f64]) -> Plane {
        let r = (kernel.len() / 2) as isize;
        let w = self.width;
        let mut out = Plane::zeros(self.width, self.height);
        out.data
            .par_chunks_mut(w)
            .zip(self.data.par_chunks(w))
            .for_each(|(dst, src)| {
                for (x, d) in dst.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, kv) in kernel.iter().enumerate() {
                        acc += kv * src[reflect(x as isize + j as isize - r, w)];
                    }
                    *d = acc;
                }
            });
        out
    }

    /// Vertical correlation with `kernel` (odd length), reflect-101 borders.
    pub fn filter_cols(&self, kernel: &[f64]) -> Plane {
        let r = (kernel.len() / 2) as isize;
        let (w, h) = (self.width, self.height);
        let mut out = Plane::zeros(w, h);
        out.data.par_chunks_mut(w).enumerate().for_each(|(y, dst)| {
            for (j, kv) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + j as isize - r, h);
                let src = &self.data[sy * w..(sy + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        });
        out
    }

    pub fn blur(&self, kernel: &[f64]) -> Plane {
        self.filter_rows(kernel).filter_cols(kernel)
    }

    /// Resamples to `width x height` by pixel-center-aligned bilinear interpolation.
    pub fn resize(&self, width: usize, height: usize) -> Plane {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Plane::zeros(width, height);
        out.data
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(y, row)| {
                let fy = (y as f64 + 0.5) * sy - 0.5;
                for (x, d) in row.iter_mut().enumerate() {
                    let fx = (x as f64 + 0.5) * sx - 0.5;
                    *d = self.sample_clamped(fx, fy);
                }
            });
        out
    }
}
