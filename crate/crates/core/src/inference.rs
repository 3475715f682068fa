//! Box-tracking inference loop.
//!
//! The first frame with motion evidence seeds a bounding box. For each later
//! frame the segmenter is called on the current box; an invalid (too small)
//! prediction grows the box around its centre and retries, up to `s_max`
//! calls. The next frame is seeded from the box of this frame's merged
//! prediction.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowBackend;
use crate::labeling::{mask_to_bbox, motion_mask};
use crate::types::{
    clamp_box, BoundingBox, FlowField, Frame, Mask, Sequence, ThresholdConfig,
    DEFAULT_MIN_COMPONENT_AREA,
};

/// Anything that turns a frame (plus optional predecessor) and a focus box
/// into a full-frame binary mask.
pub trait Segmenter {
    fn segment(
        &mut self,
        frame: &Frame,
        prev_frame: Option<&Frame>,
        bbox: BoundingBox,
    ) -> Result<Mask>;
}

impl<S: Segmenter + ?Sized> Segmenter for &mut S {
    fn segment(
        &mut self,
        frame: &Frame,
        prev_frame: Option<&Frame>,
        bbox: BoundingBox,
    ) -> Result<Mask> {
        (**self).segment(frame, prev_frame, bbox)
    }
}

/// Reference segmenter: thresholded, denoised flow from the previous frame,
/// cut to the focus box.
#[derive(Debug, Clone)]
pub struct FlowThresholdSegmenter {
    backend: FlowBackend,
    cfg: ThresholdConfig,
    // motion masks keyed by the fingerprints of (prev, current)
    cache: HashMap<(u64, u64), Mask>,
}

fn fingerprint(frame: &Frame) -> u64 {
    let mut h = DefaultHasher::new();
    (frame.width(), frame.height()).hash(&mut h);
    let bits: Vec<u32> = frame.data().iter().map(|v| v.to_bits()).collect();
    bits.hash(&mut h);
    h.finish()
}

impl FlowThresholdSegmenter {
    pub fn new(backend: FlowBackend, cfg: ThresholdConfig) -> Result<Self> {
        backend.validate()?;
        cfg.validate()?;
        Ok(Self {
            backend,
            cfg,
            cache: HashMap::new(),
        })
    }

    /// Seeds the motion cache from flows already estimated for `seq`, so
    /// segmentation does not estimate them again. `flows[i]` must be this
    /// segmenter's backend applied to `(frames[i], frames[i + 1])`.
    pub fn prime(&mut self, seq: &Sequence, flows: &[FlowField]) -> Result<()> {
        if flows.len() + 1 != seq.len() {
            return Err(Error::Argument(format!(
                "{} flow fields for {} frames",
                flows.len(),
                seq.len()
            )));
        }
        let keys: Vec<u64> = seq.frames().par_iter().map(fingerprint).collect();
        let masks = flows
            .par_iter()
            .map(|f| motion_mask(f, &self.cfg))
            .collect::<Result<Vec<_>>>()?;
        for (i, m) in masks.into_iter().enumerate() {
            self.cache.insert((keys[i], keys[i + 1]), m);
        }
        Ok(())
    }

    fn motion(&mut self, prev: &Frame, frame: &Frame) -> Result<Mask> {
        let key = (fingerprint(prev), fingerprint(frame));
        if let Some(m) = self.cache.get(&key) {
            return Ok(m.clone());
        }
        let flow = self.backend.estimate(prev, frame)?;
        let m = motion_mask(&flow, &self.cfg)?;
        self.cache.insert(key, m.clone());
        Ok(m)
    }
}

impl Segmenter for FlowThresholdSegmenter {
    fn segment(
        &mut self,
        frame: &Frame,
        prev_frame: Option<&Frame>,
        bbox: BoundingBox,
    ) -> Result<Mask> {
        match prev_frame {
            None => Ok(Mask::zeros(frame.width(), frame.height())),
            Some(prev) => Ok(self.motion(prev, frame)?.restrict_to(&bbox)),
        }
    }
}

/// Default flow magnitude, in pixels per frame, that marks the initial frame.
pub const INITIAL_SEARCH_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Segmenter calls allowed per frame.
    pub s_max: usize,
    /// Box growth per retry: the scale factor at retry `s` is `1 + expansion_base * s`.
    pub expansion_base: f64,
    /// A prediction is valid when its foreground area is strictly larger than this.
    pub validity_area: usize,
    /// Threshold used to find the first frame with motion. It sits above the
    /// labeling threshold so speckle alone does not start the loop early.
    pub threshold: ThresholdConfig,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            s_max: 5,
            expansion_base: 0.25,
            validity_area: 200,
            threshold: ThresholdConfig {
                threshold: INITIAL_SEARCH_THRESHOLD,
                min_component_area: DEFAULT_MIN_COMPONENT_AREA,
            },
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_max < 1 {
            return Err(Error::Config("s_max must be >= 1".into()));
        }
        if !(self.expansion_base.is_finite() && self.expansion_base > 0.0) {
            return Err(Error::Config(format!(
                "expansion_base must be positive, got {}",
                self.expansion_base
            )));
        }
        if self.validity_area < 1 {
            return Err(Error::Config("validity_area must be >= 1".into()));
        }
        self.threshold.validate()
    }
}

/// Loop state of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceState {
    /// Segmenter calls made.
    pub s: usize,
    /// Calls whose prediction was valid.
    pub k: usize,
    /// Box used by the last call.
    pub bbox: BoundingBox,
    /// Union of the valid predictions.
    pub merged: Mask,
}

pub fn is_valid(prediction: &Mask, validity_area: usize) -> bool {
    prediction.foreground_area() > validity_area
}

/// Scales `bbox` about its centre by `1 + expansion_base * s`, rounds outward
/// and clamps to the image.
pub fn expand_bbox(
    bbox: BoundingBox,
    s: usize,
    cfg: &InferenceConfig,
    width: usize,
    height: usize,
) -> BoundingBox {
    let factor = 1.0 + cfg.expansion_base * s as f64;
    let cx = (bbox.x0 + bbox.x1) as f64 / 2.0;
    let cy = (bbox.y0 + bbox.y1) as f64 / 2.0;
    let hw = bbox.width() as f64 / 2.0 * factor;
    let hh = bbox.height() as f64 / 2.0 * factor;
    let grown = BoundingBox {
        x0: (cx - hw).floor() as i32,
        y0: (cy - hh).floor() as i32,
        x1: (cx + hw).ceil() as i32,
        y1: (cy + hh).ceil() as i32,
    };
    clamp_box(grown, width, height).expect("scaled box keeps positive extent")
}

/// True when the prediction lies inside `bbox` and has foreground on a side
/// of it that is not an image border, i.e. the box cut the object off.
/// Foreground outside the box means the segmenter already looked past it.
pub fn cut_off_by_box(prediction: &Mask, bbox: BoundingBox) -> bool {
    let (w, h) = (prediction.width() as i32, prediction.height() as i32);
    let (x0, y0, x1, y1) = (
        bbox.x0.max(0),
        bbox.y0.max(0),
        bbox.x1.min(w),
        bbox.y1.min(h),
    );
    if x0 >= x1 || y0 >= y1 {
        return false;
    }
    let mut touches = false;
    for (x, y) in prediction.iter_foreground() {
        let (x, y) = (x as i32, y as i32);
        if x < x0 || x >= x1 || y < y0 || y >= y1 {
            return false;
        }
        touches |= (x == x0 && x0 > 0)
            || (x == x1 - 1 && x1 < w)
            || (y == y0 && y0 > 0)
            || (y == y1 - 1 && y1 < h);
    }
    touches
}

/// Runs the retry loop on one frame starting from `seed_box`.
///
/// Invalid calls grow the box. A valid call is merged, and the box grows
/// again only while the prediction is cut off by the box (see [`cut_off_by_box`]). The loop
/// ends when no change of box is needed, after `s_max` calls, or once the box
/// covers the whole image.
pub fn infer_frame<S: Segmenter + ?Sized>(
    frame: &Frame,
    prev_frame: Option<&Frame>,
    seed_box: BoundingBox,
    seg: &mut S,
    cfg: &InferenceConfig,
) -> Result<(Mask, InferenceState)> {
    cfg.validate()?;
    let (w, h) = (frame.width(), frame.height());
    if seed_box.x0 < 0
        || seed_box.y0 < 0
        || seed_box.x1 > w as i32
        || seed_box.y1 > h as i32
        || seed_box.area() < 1
    {
        return Err(Error::Argument(format!(
            "seed box {seed_box:?} is not inside the {w}x{h} frame"
        )));
    }
    let full = BoundingBox::full(w, h);
    let mut state = InferenceState {
        s: 0,
        k: 0,
        bbox: seed_box,
        merged: Mask::zeros(w, h),
    };
    loop {
        let prediction = seg.segment(frame, prev_frame, state.bbox)?;
        if !prediction.same_dims(frame) {
            return Err(Error::ContractViolation(format!(
                "segmenter returned a {}x{} mask for a {w}x{h} frame",
                prediction.width(),
                prediction.height()
            )));
        }
        state.s += 1;
        if is_valid(&prediction, cfg.validity_area) {
            state.merged.union_with(&prediction);
            state.k += 1;
            if !cut_off_by_box(&prediction, state.bbox) {
                break;
            }
        }
        if state.s >= cfg.s_max || state.bbox == full {
            break;
        }
        state.bbox = expand_bbox(seed_box, state.s, cfg, w, h);
    }
    Ok((state.merged.clone(), state))
}

/// First frame `i >= 1` whose denoised thresholded flow is non-empty, with
/// the tight box of that motion. `flows[i - 1]` carries the evidence for frame `i`.
pub fn find_initial_frame(
    seq: &Sequence,
    flows: &[FlowField],
    cfg: &InferenceConfig,
) -> Result<Option<(usize, BoundingBox)>> {
    if flows.len() + 1 != seq.len() {
        return Err(Error::Argument(format!(
            "{} flow fields for {} frames",
            flows.len(),
            seq.len()
        )));
    }
    for (i, flow) in flows.iter().enumerate() {
        if let Some(bbox) = mask_to_bbox(&motion_mask(flow, &cfg.threshold)?) {
            return Ok(Some((i + 1, bbox)));
        }
    }
    Ok(None)
}

/// Per-frame entry of `inference_trace.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTrace {
    pub frame_index: usize,
    pub s: usize,
    pub k: usize,
    pub seed_box: BoundingBox,
    pub final_box: BoundingBox,
    pub foreground_area: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceRun {
    /// `None` before the initial frame; a (possibly empty) mask from it on.
    pub masks: Vec<Option<Mask>>,
    pub trace: Vec<FrameTrace>,
    pub initial: Option<(usize, BoundingBox)>,
}

/// Runs the box-tracking loop over a whole sequence.
pub fn run_inference<S: Segmenter + ?Sized>(
    seq: &Sequence,
    flows: &[FlowField],
    seg: &mut S,
    cfg: &InferenceConfig,
) -> Result<InferenceRun> {
    cfg.validate()?;
    let initial = find_initial_frame(seq, flows, cfg)?;
    let mut masks = vec![None; seq.len()];
    let mut trace = Vec::new();
    let Some((start, first_box)) = initial else {
        return Ok(InferenceRun {
            masks,
            trace,
            initial,
        });
    };
    let frames = seq.frames();
    let mut seed = first_box;
    for i in start..seq.len() {
        let (mask, state) = infer_frame(&frames[i], Some(&frames[i - 1]), seed, seg, cfg)?;
        trace.push(FrameTrace {
            frame_index: i,
            s: state.s,
            k: state.k,
            seed_box: seed,
            final_box: state.bbox,
            foreground_area: mask.foreground_area(),
        });
        if let Some(b) = mask_to_bbox(&mask) {
            seed = b;
        }
        masks[i] = Some(mask);
    }
    Ok(InferenceRun {
        masks,
        trace,
        initial,
    })
}

/// Ablation baseline without box tracking: every frame after the first is
/// segmented from the full-image box.
pub fn run_full_frame<S: Segmenter + ?Sized>(
    seq: &Sequence,
    seg: &mut S,
    cfg: &InferenceConfig,
) -> Result<InferenceRun> {
    cfg.validate()?;
    let full = BoundingBox::full(seq.width(), seq.height());
    let frames = seq.frames();
    let mut masks = vec![None; seq.len()];
    let mut trace = Vec::new();
    for i in 1..seq.len() {
        let (mask, state) = infer_frame(&frames[i], Some(&frames[i - 1]), full, seg, cfg)?;
        trace.push(FrameTrace {
            frame_index: i,
            s: state.s,
            k: state.k,
            seed_box: full,
            final_box: state.bbox,
            foreground_area: mask.foreground_area(),
        });
        masks[i] = Some(mask);
    }
    Ok(InferenceRun {
        masks,
        trace,
        initial: None,
    })
}
