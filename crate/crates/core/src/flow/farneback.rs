//! Two-frame dense flow by polynomial expansion.
//!
//! Each frame is locally approximated by `f(p) ~ p'Ap + b'p + c` using a
//! Gaussian-weighted least-squares fit. A pure translation `d` maps the
//! expansion of the first frame onto the second with `b2 = b1 - 2 A d`, so a
//! per-pixel linear system in `d` follows. The systems are pooled over a
//! Gaussian window, solved, and the estimate is refined iteratively on a
//! coarse-to-fine pyramid.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plane::{gaussian_weights, normalized_gaussian, Plane};
use crate::error::{Error, Result};
use crate::types::{FlowField, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub pyramid_levels: usize,
    /// Size ratio between consecutive pyramid levels.
    pub pyramid_scale: f64,
    /// Radius of the polynomial-fit neighbourhood.
    pub poly_neighborhood: usize,
    /// Standard deviation of the polynomial-fit applicability.
    pub poly_sigma: f64,
    /// Radius of the Gaussian window pooling the per-pixel constraints.
    pub averaging_window: usize,
    pub iterations_per_level: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            poly_neighborhood: 3,
            poly_sigma: 1.5,
            averaging_window: 3,
            iterations_per_level: 3,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::Config("pyramid_levels must be >= 1".into()));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(Error::Config(format!(
                "pyramid_scale must lie in (0, 1), got {}",
                self.pyramid_scale
            )));
        }
        if self.poly_neighborhood < 2 {
            return Err(Error::Config("poly_neighborhood must be >= 2".into()));
        }
        if !(self.poly_sigma.is_finite() && self.poly_sigma > 0.0) {
            return Err(Error::Config("poly_sigma must be positive".into()));
        }
        if self.averaging_window < 1 {
            return Err(Error::Config("averaging_window must be >= 1".into()));
        }
        if self.iterations_per_level < 1 {
            return Err(Error::Config("iterations_per_level must be >= 1".into()));
        }
        Ok(())
    }

    /// Frame size at each pyramid level, finest first.
    fn level_sizes(&self, width: usize, height: usize) -> Result<Vec<(usize, usize)>> {
        let min_side = 2 * self.poly_neighborhood + 1;
        let mut sizes = Vec::with_capacity(self.pyramid_levels);
        for level in 0..self.pyramid_levels {
            let s = self.pyramid_scale.powi(level as i32);
            let w = ((width as f64) * s).round() as usize;
            let h = ((height as f64) * s).round() as usize;
            if w < min_side || h < min_side {
                return Err(Error::Config(format!(
                    "pyramid level {level} would be {w}x{h}, below the {min_side}x{min_side} \
                     minimum for poly_neighborhood {}; use fewer pyramid levels",
                    self.poly_neighborhood
                )));
            }
            sizes.push((w, h));
        }
        Ok(sizes)
    }
}

/// Damping added to the pooled normal equations. It only matters where the
/// window holds no structure, and pulls the estimate to zero there.
const REGULARIZATION: f64 = 3e-6;

/// Quadratic expansion coefficients per pixel: `A = [[axx, axy], [axy, ayy]]`, `b = (bx, by)`.
struct Expansion {
    width: usize,
    height: usize,
    axx: Vec<f64>,
    axy: Vec<f64>,
    ayy: Vec<f64>,
    bx: Vec<f64>,
    by: Vec<f64>,
}

/// Maps the six separable moments to the polynomial coefficients.
fn moment_inverse(radius: usize, sigma: f64) -> SMatrix<f64, 6, 6> {
    let g = gaussian_weights(sigma, radius);
    let r = radius as isize;
    let mut gram = SMatrix::<f64, 6, 6>::zeros();
    for (j, gy) in g.iter().enumerate() {
        let y = (j as isize - r) as f64;
        for (i, gx) in g.iter().enumerate() {
            let x = (i as isize - r) as f64;
            let basis = SVector::<f64, 6>::from([1.0, x, y, x * x, y * y, x * y]);
            gram += basis * basis.transpose() * (gx * gy);
        }
    }
    gram.try_inverse()
        .expect("polynomial Gram matrix is positive definite")
}

fn expand(plane: &Plane, radius: usize, sigma: f64, inverse: &SMatrix<f64, 6, 6>) -> Expansion {
    let r = radius as isize;
    let g = gaussian_weights(sigma, radius);
    let gt: Vec<f64> = g
        .iter()
        .enumerate()
        .map(|(i, w)| w * (i as isize - r) as f64)
        .collect();
    let gtt: Vec<f64> = g
        .iter()
        .enumerate()
        .map(|(i, w)| w * ((i as isize - r) as f64).powi(2))
        .collect();

    let row0 = plane.filter_rows(&g);
    let row1 = plane.filter_rows(&gt);
    let row2 = plane.filter_rows(&gtt);
    // moments against 1, x, y, x^2, y^2, xy
    let m = [
        row0.filter_cols(&g),
        row1.filter_cols(&g),
        row0.filter_cols(&gt),
        row2.filter_cols(&g),
        row0.filter_cols(&gtt),
        row1.filter_cols(&gt),
    ];
    let n = plane.width * plane.height;
    let mut coeffs: Vec<[f64; 5]> = vec![[0.0; 5]; n];
    coeffs.par_iter_mut().enumerate().for_each(|(i, c)| {
        let mv = SVector::<f64, 6>::from([
            m[0].data[i],
            m[1].data[i],
            m[2].data[i],
            m[3].data[i],
            m[4].data[i],
            m[5].data[i],
        ]);
        let p = inverse * mv;
        *c = [p[3], 0.5 * p[5], p[4], p[1], p[2]];
    });
    let pick = |j: usize| coeffs.iter().map(|c| c[j]).collect::<Vec<_>>();
    Expansion {
        width: plane.width,
        height: plane.height,
        axx: pick(0),
        axy: pick(1),
        ayy: pick(2),
        bx: pick(3),
        by: pick(4),
    }
}

/// Bilinear sample of an expansion coefficient plane, clamped to the image.
#[inline]
fn sample(data: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = data[y0 * w + x0] * (1.0 - fx) + data[y0 * w + x1] * fx;
    let bot = data[y1 * w + x0] * (1.0 - fx) + data[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// One refinement pass: builds the per-pixel normal equations around the
/// current estimate, pools them and solves.
fn refine(e1: &Expansion, e2: &Expansion, flow_u: &mut [f64], flow_v: &mut [f64], window: &[f64]) {
    let (w, h) = (e1.width, e1.height);
    let n = w * h;
    let mut g11 = Plane::zeros(w, h);
    let mut g12 = Plane::zeros(w, h);
    let mut g22 = Plane::zeros(w, h);
    let mut h1 = Plane::zeros(w, h);
    let mut h2 = Plane::zeros(w, h);
    {
        let cells: Vec<(usize, [f64; 5])> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let (du, dv) = (flow_u[i], flow_v[i]);
                let (sx, sy) = (x + du, y + dv);
                let a = 0.5 * (e1.axx[i] + sample(&e2.axx, w, h, sx, sy));
                let c = 0.5 * (e1.axy[i] + sample(&e2.axy, w, h, sx, sy));
                let b = 0.5 * (e1.ayy[i] + sample(&e2.ayy, w, h, sx, sy));
                let db1 = -0.5 * (sample(&e2.bx, w, h, sx, sy) - e1.bx[i]) + a * du + c * dv;
                let db2 = -0.5 * (sample(&e2.by, w, h, sx, sy) - e1.by[i]) + c * du + b * dv;
                (
                    i,
                    [
                        a * a + c * c,
                        c * (a + b),
                        b * b + c * c,
                        a * db1 + c * db2,
                        c * db1 + b * db2,
                    ],
                )
            })
            .collect();
        for (i, v) in cells {
            g11.data[i] = v[0];
            g12.data[i] = v[1];
            g22.data[i] = v[2];
            h1.data[i] = v[3];
            h2.data[i] = v[4];
        }
    }
    let g11 = g11.blur(window);
    let g12 = g12.blur(window);
    let g22 = g22.blur(window);
    let h1 = h1.blur(window);
    let h2 = h2.blur(window);
    flow_u
        .par_iter_mut()
        .zip(flow_v.par_iter_mut())
        .enumerate()
        .for_each(|(i, (u, v))| {
            let a = g11.data[i] + REGULARIZATION;
            let b = g12.data[i];
            let c = g22.data[i] + REGULARIZATION;
            let det = a * c - b * b;
            *u = (c * h1.data[i] - b * h2.data[i]) / det;
            *v = (a * h2.data[i] - b * h1.data[i]) / det;
        });
}

fn build_pyramid(frame: &Frame, sizes: &[(usize, usize)], scale: f64) -> Vec<Plane> {
    let mut levels = Vec::with_capacity(sizes.len());
    levels.push(Plane::from_frame(frame));
    let sigma = 0.5 / scale;
    let radius = (3.0 * sigma).ceil() as usize;
    let kernel = normalized_gaussian(sigma, radius);
    for &(w, h) in &sizes[1..] {
        let prev = levels.last().expect("pyramid starts non-empty");
        levels.push(prev.blur(&kernel).resize(w, h));
    }
    levels
}

/// Dense flow from `prev` to `next`: `next(p + flow(p)) ~ prev(p)`.
pub fn farneback_flow(prev: &Frame, next: &Frame, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if !prev.same_dims(next) {
        return Err(Error::Argument(format!(
            "frame dimensions differ: {}x{} vs {}x{}",
            prev.width(),
            prev.height(),
            next.width(),
            next.height()
        )));
    }
    let sizes = params.level_sizes(prev.width(), prev.height())?;
    let pyr1 = build_pyramid(prev, &sizes, params.pyramid_scale);
    let pyr2 = build_pyramid(next, &sizes, params.pyramid_scale);
    let inverse = moment_inverse(params.poly_neighborhood, params.poly_sigma);
    let window_sigma = params.averaging_window as f64 / 2.0;
    let window = normalized_gaussian(window_sigma, params.averaging_window);

    let mut flow: Option<(Plane, Plane)> = None;
    for level in (0..sizes.len()).rev() {
        let (w, h) = sizes[level];
        let (mut u, mut v) = match flow.take() {
            None => (vec![0.0; w * h], vec![0.0; w * h]),
            Some((pu, pv)) => {
                let sx = w as f64 / pu.width as f64;
                let sy = h as f64 / pu.height as f64;
                let u = pu.resize(w, h).data.into_iter().map(|x| x * sx).collect();
                let v = pv.resize(w, h).data.into_iter().map(|x| x * sy).collect();
                (u, v)
            }
        };
        let e1 = expand(
            &pyr1[level],
            params.poly_neighborhood,
            params.poly_sigma,
            &inverse,
        );
        let e2 = expand(
            &pyr2[level],
            params.poly_neighborhood,
            params.poly_sigma,
            &inverse,
        );
        for _ in 0..params.iterations_per_level {
            refine(&e1, &e2, &mut u, &mut v, &window);
        }
        flow = Some((
            Plane {
                width: w,
                height: h,
                data: u,
            },
            Plane {
                width: w,
                height: h,
                data: v,
            },
        ));
    }
    let (u, v) = flow.expect("at least one pyramid level");
    FlowField::new(
        u.width,
        u.height,
        u.data.into_iter().map(|x| x as f32).collect(),
        v.data.into_iter().map(|x| x as f32).collect(),
    )
}
