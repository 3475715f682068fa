//! Procedural longitudinal sequences with exact ground truth.
//!
//! The scene is dark tissue crossed by a vessel whose two walls render as
//! bright bands. A textured capsule (the catheter) slides along the vessel
//! centreline at constant speed; its footprint is the ground-truth mask.
//! Frames get independent multiplicative Gaussian speckle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::plane::{normalized_gaussian, reflect, Plane};
use crate::types::{FlowField, Frame, Mask, Sequence, SequenceKind, MIN_FRAME_SIDE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    /// Background tissue brightness.
    pub tissue_intensity: f32,
    pub wall_intensity: f32,
    pub wall_thickness: f64,
    /// Distance from the centreline to the inner edge of each wall.
    pub lumen_half_width: f64,
    pub catheter_intensity: f32,
    pub catheter_length: f64,
    pub catheter_thickness: f64,
    /// Relative depth of the brightness pattern carried along the catheter, in `[0, 1)`.
    pub catheter_texture: f32,
    /// Tip advance in pixels per frame.
    pub speed: f64,
    pub speckle_sigma: f64,
    /// First frame showing the catheter.
    pub entry_frame: usize,
    /// Vessel centreline, `(x, y)` control points; the catheter travels along it.
    pub path: Vec<[f64; 2]>,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::scaled(256, 256, 100)
    }
}

/// Gentle sinusoid across the middle of the image, one control point every 8 px.
pub fn sinusoid_path(width: usize, height: usize, margin: f64, amplitude: f64) -> Vec<[f64; 2]> {
    let (w, h) = (width as f64, height as f64);
    let x_end = w - margin;
    let mut pts = Vec::new();
    let mut x = margin;
    while x < x_end {
        pts.push([
            x,
            h / 2.0 + amplitude * (2.0 * std::f64::consts::PI * x / w).sin(),
        ]);
        x += 8.0;
    }
    pts.push([
        x_end,
        h / 2.0 + amplitude * (2.0 * std::f64::consts::PI * x_end / w).sin(),
    ]);
    pts
}

impl SynthConfig {
    /// The default scene resized to `width x height` with `n_frames` frames.
    /// Geometry scales with the width and the speed is reduced if needed so
    /// the catheter never runs past the end of the path.
    pub fn scaled(width: usize, height: usize, n_frames: usize) -> Self {
        let s = width.min(height) as f64 / 256.0;
        let path = sinusoid_path(width, height, (24.0 * s).max(4.0), 10.0 * s);
        let catheter_length = 60.0 * s;
        let entry_frame = 12.min(n_frames.saturating_sub(1) / 8);
        let travel = polyline_length(&path) - catheter_length;
        let steps = n_frames.saturating_sub(1 + entry_frame).max(1) as f64;
        Self {
            width,
            height,
            n_frames,
            tissue_intensity: 0.03,
            wall_intensity: 0.7,
            wall_thickness: (4.0 * s).max(1.0),
            lumen_half_width: (18.0 * s).max(2.0),
            catheter_intensity: 1.0,
            catheter_length,
            catheter_thickness: (10.0 * s).max(2.0),
            catheter_texture: 0.4,
            speed: 1.5f64.min(travel / steps),
            speckle_sigma: 0.02,
            entry_frame,
            path,
            rng_seed: 7,
        }
    }

    /// Stress scene in which the catheter fills the lumen and matches the
    /// wall brightness, so the two cannot be told apart in a single frame.
    pub fn touching_wall() -> Self {
        Self::default().with_touching_wall()
    }

    /// This scene with the lumen narrowed to the catheter and the catheter
    /// dimmed to wall brightness.
    pub fn with_touching_wall(self) -> Self {
        Self {
            lumen_half_width: self.catheter_thickness / 2.0,
            catheter_intensity: self.wall_intensity,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_FRAME_SIDE || self.height < MIN_FRAME_SIDE {
            return Err(Error::Config(format!(
                "frames must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"
            )));
        }
        if self.n_frames < 2 {
            return Err(Error::Config("n_frames must be >= 2".into()));
        }
        for (name, v) in [
            ("tissue_intensity", self.tissue_intensity),
            ("wall_intensity", self.wall_intensity),
            ("catheter_intensity", self.catheter_intensity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.catheter_texture) {
            return Err(Error::Config("catheter_texture must lie in [0, 1)".into()));
        }
        if self.entry_frame >= self.n_frames {
            return Err(Error::Config(format!(
                "entry_frame {} must be < n_frames {}",
                self.entry_frame, self.n_frames
            )));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(Error::Config("speed must be positive".into()));
        }
        if !(self.speckle_sigma.is_finite() && self.speckle_sigma >= 0.0) {
            return Err(Error::Config("speckle_sigma must be >= 0".into()));
        }
        if !(self.catheter_length > 0.0
            && self.catheter_thickness > 0.0
            && self.wall_thickness >= 0.0)
        {
            return Err(Error::Config(
                "catheter and wall dimensions must be positive".into(),
            ));
        }
        if self.catheter_thickness / 2.0 > self.lumen_half_width {
            return Err(Error::Config(format!(
                "catheter thickness {} does not fit the lumen (half width {})",
                self.catheter_thickness, self.lumen_half_width
            )));
        }
        if self.path.len() < 2 {
            return Err(Error::Config(
                "path needs at least two control points".into(),
            ));
        }
        let r = self.catheter_thickness / 2.0;
        let (w, h) = (self.width as f64, self.height as f64);
        if let Some(p) = self
            .path
            .iter()
            .find(|p| p[0] - r < 0.0 || p[1] - r < 0.0 || p[0] + r > w - 1.0 || p[1] + r > h - 1.0)
        {
            return Err(Error::Config(format!(
                "catheter path exits the image at ({}, {})",
                p[0], p[1]
            )));
        }
        let needed =
            self.catheter_length + self.speed * (self.n_frames - 1 - self.entry_frame) as f64;
        let available = polyline_length(&self.path);
        if needed > available + 1e-9 {
            return Err(Error::Config(format!(
                "catheter path exits the image: tip travels to arclength {needed:.1} but the path is {available:.1} px long"
            )));
        }
        Ok(())
    }

    /// Arclength of the tip at frame `t`, or `None` before entry.
    pub fn tip_arclength(&self, t: usize) -> Option<f64> {
        (t >= self.entry_frame)
            .then(|| self.catheter_length + self.speed * (t - self.entry_frame) as f64)
    }
}

fn polyline_length(path: &[[f64; 2]]) -> f64 {
    path.windows(2).map(|s| dist(s[0], s[1])).sum()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Closest point of segment `a..b` to `p`: returns (distance, fraction along the segment).
#[inline]
fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * dx, a[1] + t * dy];
    (dist(p, q), t)
}

/// Polyline with cumulative arclength at each vertex.
struct Track {
    points: Vec<[f64; 2]>,
    arclength: Vec<f64>,
}

impl Track {
    fn new(points: Vec<[f64; 2]>) -> Self {
        let mut arclength = vec![0.0];
        for s in points.windows(2) {
            let last = *arclength.last().unwrap();
            arclength.push(last + dist(s[0], s[1]));
        }
        Self { points, arclength }
    }

    fn point_at(&self, s: f64) -> [f64; 2] {
        let i = self
            .arclength
            .windows(2)
            .position(|w| s <= w[1])
            .unwrap_or(self.points.len() - 2);
        let seg = self.arclength[i + 1] - self.arclength[i];
        let t = if seg > 0.0 {
            ((s - self.arclength[i]) / seg).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    /// The piece of the track between arclengths `s0 < s1`.
    fn slice(&self, s0: f64, s1: f64) -> Track {
        let mut pts = vec![self.point_at(s0)];
        for (p, &s) in self.points.iter().zip(&self.arclength) {
            if s > s0 && s < s1 {
                pts.push(*p);
            }
        }
        pts.push(self.point_at(s1));
        Track::new(pts)
    }

    /// Distance from `p` to the track and the arclength of the closest point.
    fn nearest(&self, p: [f64; 2]) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        for (i, s) in self.points.windows(2).enumerate() {
            let (d, t) = segment_distance(p, s[0], s[1]);
            if d < best.0 {
                best = (
                    d,
                    self.arclength[i] + t * (self.arclength[i + 1] - self.arclength[i]),
                );
            }
        }
        best
    }
}

/// Smooth 1D brightness profile along the catheter body, fixed per seed.
struct Profile {
    knots: Vec<f64>,
    spacing: f64,
}

impl Profile {
    fn new(seed: u64, length: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
        let spacing = 5.0;
        let n = (length / spacing).ceil() as usize + 2;
        Self {
            knots: (0..n).map(|_| rng.gen::<f64>()).collect(),
            spacing,
        }
    }

    /// Value in `[0, 1]` at distance `a` behind the tip.
    fn at(&self, a: f64) -> f64 {
        let x = (a / self.spacing).max(0.0);
        let i = (x.floor() as usize).min(self.knots.len() - 2);
        let t = (x - i as f64).clamp(0.0, 1.0);
        let t = t * t * (3.0 - 2.0 * t);
        self.knots[i] * (1.0 - t) + self.knots[i + 1] * t
    }
}

/// Static background: dark tissue with two bright vessel walls.
fn base_scene(cfg: &SynthConfig) -> Vec<f32> {
    // extend the centreline horizontally to both image borders
    let mut pts = cfg.path.clone();
    let first = pts[0];
    let last = *pts.last().unwrap();
    pts.insert(0, [-(cfg.width as f64), first[1]]);
    pts.push([2.0 * cfg.width as f64, last[1]]);
    let vessel = Track::new(pts);
    let (inner, outer) = (
        cfg.lumen_half_width,
        cfg.lumen_half_width + cfg.wall_thickness,
    );
    let mut out = vec![0.0f32; cfg.width * cfg.height];
    out.par_chunks_mut(cfg.width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, v) in row.iter_mut().enumerate() {
                let (d, _) = vessel.nearest([x as f64, y as f64]);
                *v = if d >= inner && d <= outer {
                    cfg.wall_intensity
                } else {
                    cfg.tissue_intensity
                };
            }
        });
    out
}

/// Noise-free catheter layer and footprint at frame `t`.
fn catheter_layer(
    cfg: &SynthConfig,
    track: &Track,
    profile: &Profile,
    t: usize,
) -> (Vec<f32>, Mask) {
    let (w, h) = (cfg.width, cfg.height);
    let mut layer = vec![0.0f32; w * h];
    let mut mask = Mask::zeros(w, h);
    let Some(tip) = cfg.tip_arclength(t) else {
        return (layer, mask);
    };
    let body = track.slice(tip - cfg.catheter_length, tip);
    let r = cfg.catheter_thickness / 2.0;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &body.points {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let xs = ((x0 - r).floor().max(0.0) as usize)..=((x1 + r).ceil().min((w - 1) as f64) as usize);
    let ys = ((y0 - r).floor().max(0.0) as usize)..=((y1 + r).ceil().min((h - 1) as f64) as usize);
    for y in ys {
        for x in xs.clone() {
            let (d, s) = body.nearest([x as f64, y as f64]);
            if d <= r {
                let behind_tip = cfg.catheter_length - s;
                let shade = 1.0 - cfg.catheter_texture as f64 * profile.at(behind_tip);
                layer[y * w + x] = (cfg.catheter_intensity as f64 * shade) as f32;
                mask.set(x, y, true);
            }
        }
    }
    (layer, mask)
}

/// Renders a full sequence with ground-truth masks.
pub fn generate(cfg: &SynthConfig) -> Result<Sequence> {
    cfg.validate()?;
    let base = base_scene(cfg);
    let track = Track::new(cfg.path.clone());
    let profile = Profile::new(cfg.rng_seed, cfg.catheter_length);
    let rendered: Vec<(Frame, Mask)> = (0..cfg.n_frames)
        .into_par_iter()
        .map(|t| {
            let (layer, mask) = catheter_layer(cfg, &track, &profile, t);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(t as u64);
            let data: Vec<f32> = base
                .iter()
                .zip(&layer)
                .map(|(&b, &c)| {
                    let clean = (b + c).clamp(0.0, 1.0) as f64;
                    if cfg.speckle_sigma > 0.0 {
                        let n: f64 = rng.sample(StandardNormal);
                        (clean * (1.0 + cfg.speckle_sigma * n)).clamp(0.0, 1.0) as f32
                    } else {
                        clean as f32
                    }
                })
                .collect();
            let frame =
                Frame::new(cfg.width, cfg.height, data).expect("rendered values lie in [0, 1]");
            (frame, mask)
        })
        .collect();
    let (frames, gt): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();
    Sequence::new(
        format!("synthetic-seed{}", cfg.rng_seed),
        SequenceKind::Synthetic,
        frames,
        Some(gt),
    )
}

/// Smooth random texture in `[0, 1]`: white noise blurred with a Gaussian.
pub fn random_texture(seed: u64, width: usize, height: usize) -> Result<Frame> {
    random_texture_with_grain(seed, width, height, 1.5)
}

/// Like [`random_texture`], with the blur width (feature size) given in pixels.
pub fn random_texture_with_grain(
    seed: u64,
    width: usize,
    height: usize,
    grain: f64,
) -> Result<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Plane {
        width,
        height,
        data: (0..width * height).map(|_| rng.gen::<f64>()).collect(),
    };
    let smooth = noise.blur(&normalized_gaussian(grain, (3.0 * grain).ceil() as usize));
    let lo = smooth.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = smooth
        .data
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    Frame::new(
        width,
        height,
        smooth
            .data
            .iter()
            .map(|v| ((v - lo) / span) as f32)
            .collect(),
    )
}

/// Bilinear sample with reflect-101 fill outside the image.
fn sample_reflect(frame: &Frame, x: f64, y: f64) -> f64 {
    let (w, h) = (frame.width(), frame.height());
    let (xf, yf) = (x.floor(), y.floor());
    let (fx, fy) = (x - xf, y - yf);
    let (xi, yi) = (xf as isize, yf as isize);
    let at = |dx: isize, dy: isize| frame.get(reflect(xi + dx, w), reflect(yi + dy, h)) as f64;
    let top = at(0, 0) * (1.0 - fx) + at(1, 0) * fx;
    let bottom = at(0, 1) * (1.0 - fx) + at(1, 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Translates `frame` by `(dx, dy)`: `out(p) = frame(p - (dx, dy))`.
pub fn shift_frame(frame: &Frame, dx: f64, dy: f64) -> Frame {
    Frame::from_fn(frame.width(), frame.height(), |x, y| {
        sample_reflect(frame, x as f64 - dx, y as f64 - dy) as f32
    })
    .expect("interpolation stays in [0, 1]")
}

/// A random texture, the same texture shifted by `(dx, dy)`, and the
/// constant ground-truth flow between them.
pub fn constant_shift_pair(
    texture_seed: u64,
    width: usize,
    height: usize,
    dx: f64,
    dy: f64,
) -> Result<(Frame, Frame, FlowField)> {
    let limit = width.min(height) as f64 / 4.0;
    if !(dx.abs() < limit && dy.abs() < limit) {
        return Err(Error::Argument(format!(
            "shift ({dx}, {dy}) must stay below {limit} px per axis"
        )));
    }
    let first = random_texture(texture_seed, width, height)?;
    let second = shift_frame(&first, dx, dy);
    let gt = FlowField::constant(width, height, dx as f32, dy as f32)?;
    Ok((first, second, gt))
}
