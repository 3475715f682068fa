//! Patch correlation, cost volumes and the block-matching flow estimator.
//!
//! The correlation of two `(2k+1) x (2k+1)` patches centred at `x1` in `f1`
//! and `x2` in `f2` is the plain sum of pixel products over the patch offsets.
//! Block matching ranks displacements by that score normalised by the two
//! patch self-correlations, which makes the true integer shift the unique
//! maximiser on textured input.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plane::reflect;
use crate::error::{Error, Result};
use crate::types::{FlowField, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationParams {
    /// Patch radius; patches are `2k+1` pixels on a side.
    pub k: usize,
    /// Largest displacement searched along each axis.
    pub d: usize,
    /// Refine the integer argmax with a parabola fit per axis.
    pub subpixel: bool,
}

impl Default for CorrelationParams {
    fn default() -> Self {
        Self {
            k: 2,
            d: 3,
            subpixel: false,
        }
    }
}

impl CorrelationParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config(
                "correlation patch radius k must be >= 1".into(),
            ));
        }
        if self.d < 1 {
            return Err(Error::Config("search displacement d must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of displacements per axis, `2d + 1`.
    pub fn side(&self) -> usize {
        2 * self.d + 1
    }
}

/// Pixel coordinate `(x, y)`; signed so out-of-range requests can be reported.
pub type Pixel = (isize, isize);

/// Sum of products over a `(2k+1)^2` patch. Offsets run row-major; the
/// accumulation order is part of the contract shared by every caller.
#[inline]
fn patch_dot(
    a: &[f32],
    a_w: usize,
    ac: (usize, usize),
    b: &[f32],
    b_w: usize,
    bc: (usize, usize),
    k: usize,
) -> f64 {
    let mut acc = 0.0f64;
    let side = 2 * k + 1;
    for oy in 0..side {
        let ra = (ac.1 + oy - k) * a_w + ac.0 - k;
        let rb = (bc.1 + oy - k) * b_w + bc.0 - k;
        for ox in 0..side {
            acc += a[ra + ox] as f64 * b[rb + ox] as f64;
        }
    }
    acc
}

fn check_patch(frame: &Frame, p: Pixel, k: usize, which: &str) -> Result<(usize, usize)> {
    let k = k as isize;
    let (w, h) = (frame.width() as isize, frame.height() as isize);
    if p.0 - k < 0 || p.1 - k < 0 || p.0 + k >= w || p.1 + k >= h {
        return Err(Error::Argument(format!(
            "patch of radius {k} at {which} = ({}, {}) leaves the {w}x{h} frame",
            p.0, p.1
        )));
    }
    Ok((p.0 as usize, p.1 as usize))
}

/// Correlation of the patch around `x1` in `f1` with the patch around `x2` in `f2`.
pub fn correlate(f1: &Frame, f2: &Frame, x1: Pixel, x2: Pixel, k: usize) -> Result<f64> {
    let a = check_patch(f1, x1, k, "x1")?;
    let b = check_patch(f2, x2, k, "x2")?;
    Ok(patch_dot(
        f1.data(),
        f1.width(),
        a,
        f2.data(),
        f2.width(),
        b,
        k,
    ))
}

/// Copy of `frame` with a reflect-101 border of `pad` pixels on every side.
pub fn pad_reflect(frame: &Frame, pad: usize) -> Frame {
    let (w, h) = (frame.width(), frame.height());
    let p = pad as isize;
    Frame::from_fn(w + 2 * pad, h + 2 * pad, |x, y| {
        frame.get(reflect(x as isize - p, w), reflect(y as isize - p, h))
    })
    .expect("padding a valid frame yields a valid frame")
}

/// Raw correlation scores of every pixel against every displacement in `[-d, d]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    d: usize,
    scores: Vec<f64>,
}

impl CostVolume {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Scores per pixel, `(2d+1)^2`.
    pub fn grid_len(&self) -> usize {
        (2 * self.d + 1).pow(2)
    }

    /// Scores of one pixel, row-major over `(dy, dx)` from `-d` to `d`.
    pub fn scores_at(&self, x: usize, y: usize) -> &[f64] {
        let g = self.grid_len();
        let i = (y * self.width + x) * g;
        &self.scores[i..i + g]
    }

    pub fn score(&self, x: usize, y: usize, dx: isize, dy: isize) -> f64 {
        let side = 2 * self.d + 1;
        let d = self.d as isize;
        self.scores_at(x, y)[((dy + d) as usize) * side + (dx + d) as usize]
    }
}

/// Pads both frames by `k + d` so every pixel and displacement has a full patch.
///
/// Pixel `p` of the volume corresponds to `p + (k + d)` in the padded frames,
/// so `score(p, delta) == correlate(pad(f1), pad(f2), p + r, p + r + delta, k)`.
pub fn build_cost_volume(f1: &Frame, f2: &Frame, params: &CorrelationParams) -> Result<CostVolume> {
    params.validate()?;
    if !f1.same_dims(f2) {
        return Err(Error::Argument(format!(
            "frame dimensions differ: {}x{} vs {}x{}",
            f1.width(),
            f1.height(),
            f2.width(),
            f2.height()
        )));
    }
    let (w, h) = (f1.width(), f1.height());
    let (k, d) = (params.k, params.d);
    let r = k + d;
    let p1 = pad_reflect(f1, r);
    let p2 = pad_reflect(f2, r);
    let pw = p1.width();
    let side = params.side();
    let g = side * side;
    let mut scores = vec![0.0f64; w * h * g];
    scores
        .par_chunks_mut(w * g)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let c1 = (x + r, y + r);
                let cell = &mut row[x * g..(x + 1) * g];
                for dy in 0..side {
                    for dx in 0..side {
                        let c2 = (x + r + dx - d, y + r + dy - d);
                        cell[dy * side + dx] = patch_dot(p1.data(), pw, c1, p2.data(), pw, c2, k);
                    }
                }
            }
        });
    Ok(CostVolume {
        width: w,
        height: h,
        d,
        scores,
    })
}

/// Patch self-correlation (energy) at every pixel of a padded frame whose
/// centre is at least `k` pixels from the border; other entries are unused.
fn patch_energies(padded: &Frame, k: usize) -> Vec<f64> {
    let (w, h) = (padded.width(), padded.height());
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        if y < k || y + k >= h {
            return;
        }
        for (x, e) in row.iter_mut().enumerate().take(w - k).skip(k) {
            *e = patch_dot(padded.data(), w, (x, y), padded.data(), w, (x, y), k);
        }
    });
    out
}

/// Scores normalised by patch energies: `c(x1, x2) / sqrt(c(x1, x1) c(x2, x2))`.
///
/// Zero-energy pairs score 0.
pub fn normalized_cost_volume(
    f1: &Frame,
    f2: &Frame,
    params: &CorrelationParams,
) -> Result<CostVolume> {
    let mut volume = build_cost_volume(f1, f2, params)?;
    let (k, d) = (params.k, params.d);
    let r = k + d;
    let p1 = pad_reflect(f1, r);
    let p2 = pad_reflect(f2, r);
    let pw = p1.width();
    let e1 = patch_energies(&p1, k);
    let e2 = patch_energies(&p2, k);
    let w = volume.width;
    let side = params.side();
    let g = side * side;
    volume
        .scores
        .par_chunks_mut(w * g)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let en1 = e1[(y + r) * pw + x + r];
                let cell = &mut row[x * g..(x + 1) * g];
                for dy in 0..side {
                    for dx in 0..side {
                        let en2 = e2[(y + r + dy - d) * pw + x + r + dx - d];
                        let denom = (en1 * en2).sqrt();
                        let s = &mut cell[dy * side + dx];
                        *s = if denom > 0.0 { *s / denom } else { 0.0 };
                    }
                }
            }
        });
    Ok(volume)
}

/// Index of the best displacement in a cell. Ties go to the smaller
/// displacement magnitude, then to the lexicographically smaller `(dy, dx)`.
fn best_displacement(cell: &[f64], d: usize) -> (isize, isize) {
    let side = 2 * d + 1;
    let di = d as isize;
    let mut best: Option<(f64, isize, isize, isize)> = None;
    for (i, &s) in cell.iter().enumerate() {
        let dy = (i / side) as isize - di;
        let dx = (i % side) as isize - di;
        let mag = dx * dx + dy * dy;
        let better = match best {
            None => true,
            Some((bs, bmag, bdy, bdx)) => {
                s > bs || (s == bs && (mag < bmag || (mag == bmag && (dy, dx) < (bdy, bdx))))
            }
        };
        if better {
            best = Some((s, mag, dy, dx));
        }
    }
    let (_, _, dy, dx) = best.expect("cell is non-empty");
    (dx, dy)
}

/// Vertex offset of the parabola through `(-1, left), (0, mid), (1, right)`,
/// limited to half a pixel; 0 when the samples do not form a peak.
#[inline]
fn parabola_offset(left: f64, mid: f64, right: f64) -> f64 {
    let curvature = left - 2.0 * mid + right;
    if curvature < 0.0 {
        (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Dense flow from `prev` to `next` by exhaustive normalised-correlation search.
pub fn block_matching_flow(
    prev: &Frame,
    next: &Frame,
    params: &CorrelationParams,
) -> Result<FlowField> {
    let volume = normalized_cost_volume(prev, next, params)?;
    let (w, h) = (volume.width, volume.height);
    let d = params.d as isize;
    let side = params.side();
    let mut u = vec![0.0f32; w * h];
    let mut v = vec![0.0f32; w * h];
    u.par_chunks_mut(w)
        .zip(v.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (urow, vrow))| {
            for x in 0..w {
                let cell = volume.scores_at(x, y);
                let (dx, dy) = best_displacement(cell, params.d);
                let mut fx = dx as f64;
                let mut fy = dy as f64;
                if params.subpixel {
                    let at = |ddx: isize, ddy: isize| {
                        cell[((ddy + d) as usize) * side + (ddx + d) as usize]
                    };
                    let mid = at(dx, dy);
                    if dx > -d && dx < d {
                        fx += parabola_offset(at(dx - 1, dy), mid, at(dx + 1, dy));
                    }
                    if dy > -d && dy < d {
                        fy += parabola_offset(at(dx, dy - 1), mid, at(dx, dy + 1));
                    }
                }
                urow[x] = fx as f32;
                vrow[x] = fy as f32;
            }
        });
    FlowField::new(w, h, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_patches() {
        let f = Frame::constant(8, 8, 1.0).unwrap();
        assert_eq!(correlate(&f, &f, (3, 3), (4, 4), 1).unwrap(), 9.0);
        let z = Frame::constant(8, 8, 0.0).unwrap();
        assert_eq!(correlate(&f, &z, (3, 3), (2, 5), 2).unwrap(), 0.0);
    }

    #[test]
    fn out_of_bounds_patch_is_rejected() {
        let f = Frame::constant(8, 8, 0.5).unwrap();
        let err = correlate(&f, &f, (0, 3), (3, 3), 1).unwrap_err();
        assert!(err.to_string().contains("x1 = (0, 3)"), "{err}");
        assert!(correlate(&f, &f, (3, 3), (3, 7), 1).is_err());
        assert!(correlate(&f, &f, (6, 6), (6, 6), 1).is_ok());
    }

    #[test]
    fn volume_size_and_mismatch() {
        let f = Frame::constant(8, 8, 0.5).unwrap();
        let p = CorrelationParams {
            k: 1,
            d: 1,
            subpixel: false,
        };
        let vol = build_cost_volume(&f, &f, &p).unwrap();
        assert_eq!(vol.grid_len(), 9);
        assert_eq!(vol.scores_at(0, 0).len(), 9);
        let g = Frame::constant(9, 8, 0.5).unwrap();
        assert!(matches!(
            build_cost_volume(&f, &g, &p),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn constant_frames_give_zero_flow() {
        for value in [0.0, 0.4] {
            let f = Frame::constant(10, 9, value).unwrap();
            for subpixel in [false, true] {
                let p = CorrelationParams {
                    k: 1,
                    d: 2,
                    subpixel,
                };
                let flow = block_matching_flow(&f, &f, &p).unwrap();
                assert!(flow.u().iter().chain(flow.v()).all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn tie_break_prefers_small_then_lexicographic() {
        let d = 1;
        let mut cell = vec![0.0; 9];
        // (dx, dy) = (1, 0) and (0, -1) and (-1, 0) tie at magnitude 1
        cell[5] = 2.0;
        cell[1] = 2.0;
        cell[3] = 2.0;
        assert_eq!(best_displacement(&cell, d), (0, -1));
        cell[4] = 2.0;
        assert_eq!(best_displacement(&cell, d), (0, 0));
    }

    #[test]
    fn parabola_vertex() {
        // y = -(x - 0.25)^2
        let f = |x: f64| -(x - 0.25) * (x - 0.25);
        assert!((parabola_offset(f(-1.0), f(0.0), f(1.0)) - 0.25).abs() < 1e-12);
        assert_eq!(parabola_offset(1.0, 1.0, 1.0), 0.0);
    }
}
