//! Domain types shared by every stage: frames, flow fields, masks, boxes and sequences.
//!
//! All constructors validate their invariants; once built, values are immutable
//! apart from explicit pixel setters on [`Mask`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted frame side, in pixels.
pub const MIN_FRAME_SIDE: usize = 8;

/// Single-channel intensity image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
            return Err(Error::Argument(format!(
                "frame must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, got {width}x{height}"
            )));
        }
        check_len(width, height, data.len(), "frame")?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Data(format!(
                "frame intensity {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a frame by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn same_dims<T: Dimensions>(&self, other: &T) -> bool {
        self.width == other.width() && self.height == other.height()
    }
}

/// Anything with a pixel grid.
pub trait Dimensions {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
}

impl Dimensions for Frame {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl Dimensions for Mask {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl Dimensions for FlowField {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

fn check_len(width: usize, height: usize, len: usize, what: &str) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!(
            "{what} dimensions must be non-zero"
        )));
    }
    if len != width * height {
        return Err(Error::Argument(format!(
            "{what} data has {len} values, expected {width}x{height} = {}",
            width * height
        )));
    }
    Ok(())
}

/// Dense per-pixel displacement `(u, v)` in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        check_len(width, height, u.len(), "flow u")?;
        check_len(width, height, v.len(), "flow v")?;
        if let Some(i) = u.iter().chain(v.iter()).position(|x| !x.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite flow component at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![u; width * height],
            vec![v; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn mean_abs(&self) -> (f64, f64) {
        let n = self.u.len() as f64;
        let mu = self.u.iter().map(|x| x.abs() as f64).sum::<f64>() / n;
        let mv = self.v.iter().map(|x| x.abs() as f64).sum::<f64>() / n;
        (mu, mv)
    }
}

/// Binary segmentation image, one byte per pixel holding 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_len(width, height, data.len(), "mask")?;
        if let Some(i) = data.iter().position(|&b| b > 1) {
            return Err(Error::Data(format!(
                "mask value {} at index {i} is not binary",
                data[i]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn foreground_area(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }

    pub fn same_dims<T: Dimensions>(&self, other: &T) -> bool {
        self.width == other.width() && self.height == other.height()
    }

    /// In-place union. Panics on dimension mismatch; callers check first.
    pub fn union_with(&mut self, other: &Mask) {
        assert!(
            self.same_dims(other),
            "mask union across different dimensions"
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// Zeroes every pixel outside `bbox`.
    pub fn restrict_to(&self, bbox: &BoundingBox) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| {
            self.get(x, y) && bbox.contains(x as i32, y as i32)
        })
    }

    /// True when every foreground pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_dims(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| *a == 0 || *b != 0)
    }

    pub fn iter_foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(move |(i, _)| (i % w, i / w))
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl BoundingBox {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Argument(format!(
                "degenerate bounding box ({x0},{y0},{x1},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width as i32,
            y1: height as i32,
        }
    }

    pub fn width(&self) -> i32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> i64 {
        (self.width().max(0) as i64) * (self.height().max(0) as i64)
    }

    #[inline]
    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// Clamps `bbox` into a `width x height` image.
///
/// A box that clamping would empty (it lies entirely off-image) becomes the
/// full-image box.
pub fn clamp_box(bbox: BoundingBox, width: usize, height: usize) -> Result<BoundingBox> {
    if bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 {
        return Err(Error::Argument(format!(
            "cannot clamp degenerate box ({},{},{},{})",
            bbox.x0, bbox.y0, bbox.x1, bbox.y1
        )));
    }
    let (w, h) = (width as i32, height as i32);
    let clamped = BoundingBox {
        x0: bbox.x0.clamp(0, w),
        y0: bbox.y0.clamp(0, h),
        x1: bbox.x1.clamp(0, w),
        y1: bbox.y1.clamp(0, h),
    };
    if clamped.x0 >= clamped.x1 || clamped.y0 >= clamped.y1 {
        Ok(BoundingBox::full(width, height))
    } else {
        Ok(clamped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Synthetic,
    Phantom,
}

impl std::str::FromStr for SequenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(SequenceKind::Synthetic),
            "phantom" => Ok(SequenceKind::Phantom),
            other => Err(Error::Argument(format!("unknown sequence kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SequenceKind::Synthetic => f.write_str("synthetic"),
            SequenceKind::Phantom => f.write_str("phantom"),
        }
    }
}

/// An ordered run of equally sized frames, optionally with aligned ground truth.
#[derive(Debug, Clone)]
pub struct Sequence {
    frames: Vec<Frame>,
    kind: SequenceKind,
    name: String,
    ground_truth: Option<Vec<Mask>>,
}

impl Sequence {
    pub fn new(
        name: impl Into<String>,
        kind: SequenceKind,
        frames: Vec<Frame>,
        ground_truth: Option<Vec<Mask>>,
    ) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Argument(format!(
                "a sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let first = &frames[0];
        if let Some(i) = frames.iter().position(|f| !f.same_dims(first)) {
            return Err(Error::Argument(format!(
                "frame {i} is {}x{}, expected {}x{}",
                frames[i].width(),
                frames[i].height(),
                first.width(),
                first.height()
            )));
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != frames.len() {
                return Err(Error::Argument(format!(
                    "{} ground-truth masks for {} frames",
                    gt.len(),
                    frames.len()
                )));
            }
            if let Some(i) = gt.iter().position(|m| !m.same_dims(first)) {
                return Err(Error::Argument(format!(
                    "ground-truth mask {i} does not match frame dimensions"
                )));
            }
        }
        Ok(Self {
            frames,
            kind,
            name: name.into(),
            ground_truth,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ground_truth(&self) -> Option<&[Mask]> {
        self.ground_truth.as_deref()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}

/// Flow-magnitude threshold plus the component-area floor used to denoise labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// Per-component flow threshold in pixels/frame.
    pub threshold: f32,
    /// 8-connected components smaller than this are discarded.
    pub min_component_area: usize,
}

/// Default labeling-stage denoising floor, in pixels.
pub const DEFAULT_MIN_COMPONENT_AREA: usize = 10;

impl ThresholdConfig {
    pub fn new(threshold: f32, min_component_area: usize) -> Result<Self> {
        let cfg = Self {
            threshold,
            min_component_area,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn for_kind(kind: SequenceKind) -> Self {
        Self {
            threshold: crate::labeling::default_threshold(kind),
            min_component_area: DEFAULT_MIN_COMPONENT_AREA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::Config(format!(
                "flow threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self::for_kind(SequenceKind::Synthetic)
    }
}
