//! Flow fields to binary pseudo-labels.
//!
//! A pixel is foreground when either flow component strictly exceeds the
//! threshold. Small 8-connected specks are removed, and a frame whose cleaned
//! mask is empty counts as stationary.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{indexed_name, read_json, read_mask, write_json, write_mask};
use crate::types::{BoundingBox, FlowField, Mask, Sequence, SequenceKind, ThresholdConfig};

pub const SYNTHETIC_THRESHOLD: f32 = 0.2;
pub const PHANTOM_THRESHOLD: f32 = 1.0;

/// Default flow threshold for a kind of sequence, in pixels/frame.
pub fn default_threshold(kind: SequenceKind) -> f32 {
    match kind {
        SequenceKind::Synthetic => SYNTHETIC_THRESHOLD,
        SequenceKind::Phantom => PHANTOM_THRESHOLD,
    }
}

/// The configured threshold when given, else the default for `kind`.
pub fn resolve_threshold(kind: SequenceKind, configured: Option<f32>) -> f32 {
    configured.unwrap_or_else(|| default_threshold(kind))
}

pub fn threshold_flow(flow: &FlowField, threshold: f32) -> Result<Mask> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::Argument(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let data = flow
        .u()
        .iter()
        .zip(flow.v())
        .enumerate()
        .map(|(i, (&u, &v))| {
            if !u.is_finite() || !v.is_finite() {
                return Err(Error::Data(format!("non-finite flow at pixel {i}")));
            }
            Ok((u.abs() > threshold || v.abs() > threshold) as u8)
        })
        .collect::<Result<Vec<u8>>>()?;
    Mask::new(flow.width(), flow.height(), data)
}

/// Labels 8-connected foreground components; returns per-pixel labels
/// (0 = background, components numbered from 1) and each component's area.
pub fn label_components(mask: &Mask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut areas = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let id = areas.len() as u32;
        let mut area = 0;
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.data()[j] != 0 && labels[j] == 0 {
                        labels[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// Erases every 8-connected component with fewer than `min_area` pixels.
pub fn remove_small_components(mask: &Mask, min_area: usize) -> Mask {
    if min_area == 0 {
        return mask.clone();
    }
    let (labels, areas) = label_components(mask);
    let data = labels
        .iter()
        .map(|&l| (l != 0 && areas[l as usize] >= min_area) as u8)
        .collect();
    Mask::new(mask.width(), mask.height(), data).expect("labels keep mask dimensions")
}

/// Thresholds and denoises one flow field.
pub fn motion_mask(flow: &FlowField, cfg: &ThresholdConfig) -> Result<Mask> {
    Ok(remove_small_components(
        &threshold_flow(flow, cfg.threshold)?,
        cfg.min_component_area,
    ))
}

pub fn is_stationary(flow: &FlowField, threshold: f32, min_area: usize) -> Result<bool> {
    Ok(remove_small_components(&threshold_flow(flow, threshold)?, min_area).is_empty())
}

/// Tight half-open box around the foreground, `None` for an empty mask.
pub fn mask_to_bbox(mask: &Mask) -> Option<BoundingBox> {
    let mut it = mask.iter_foreground();
    let (x, y) = it.next()?;
    let (mut x0, mut y0, mut x1, mut y1) = (x, y, x, y);
    for (x, y) in it {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    Some(BoundingBox {
        x0: x0 as i32,
        y0: y0 as i32,
        x1: x1 as i32 + 1,
        y1: y1 as i32 + 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabel {
    pub frame_index: usize,
    pub mask: Mask,
    pub bbox: Option<BoundingBox>,
    pub stationary: bool,
}

impl FrameLabel {
    fn from_mask(frame_index: usize, mask: Mask) -> Self {
        let bbox = mask_to_bbox(&mask);
        Self {
            frame_index,
            stationary: bbox.is_none(),
            bbox,
            mask,
        }
    }

    pub fn record(&self) -> LabelRecord {
        LabelRecord {
            frame_index: self.frame_index,
            bbox: self.bbox,
            stationary: self.stationary,
            foreground_area: self.mask.foreground_area(),
        }
    }
}

/// One entry of `labels.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub frame_index: usize,
    pub bbox: Option<BoundingBox>,
    pub stationary: bool,
    pub foreground_area: usize,
}

/// Pseudo-labels for every frame. Frame 0 has no preceding motion and is
/// always stationary; frame `i >= 1` is labelled from `flows[i - 1]`.
pub fn generate_labels(
    seq: &Sequence,
    flows: &[FlowField],
    cfg: &ThresholdConfig,
) -> Result<Vec<FrameLabel>> {
    cfg.validate()?;
    if flows.len() + 1 != seq.len() {
        return Err(Error::Argument(format!(
            "{} flow fields for {} frames; expected {}",
            flows.len(),
            seq.len(),
            seq.len() - 1
        )));
    }
    if let Some(i) = flows
        .iter()
        .position(|f| f.width() != seq.width() || f.height() != seq.height())
    {
        return Err(Error::Argument(format!(
            "flow {i} does not match frame dimensions"
        )));
    }
    let mut labels = vec![FrameLabel::from_mask(
        0,
        Mask::zeros(seq.width(), seq.height()),
    )];
    let rest = flows
        .par_iter()
        .enumerate()
        .map(|(i, flow)| Ok(FrameLabel::from_mask(i + 1, motion_mask(flow, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    labels.extend(rest);
    Ok(labels)
}

pub const LABELS_FILE: &str = "labels.json";

/// Writes `mask_%05d.png` per frame plus `labels.json`, creating `dir` if
/// needed. Returns the mask file names.
pub fn write_labels(labels: &[FrameLabel], dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names = labels
        .par_iter()
        .map(|l| {
            let name = indexed_name("mask", l.frame_index, "png");
            write_mask(&l.mask, dir.join(&name))?;
            Ok(name)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<LabelRecord> = labels.iter().map(FrameLabel::record).collect();
    write_json(&records, dir.join(LABELS_FILE))?;
    Ok(names)
}

/// Inverse of [`write_labels`].
pub fn read_labels(dir: impl AsRef<Path>) -> Result<Vec<FrameLabel>> {
    let dir = dir.as_ref();
    let records: Vec<LabelRecord> = read_json(dir.join(LABELS_FILE))?;
    records
        .into_iter()
        .map(|r| {
            let mask = read_mask(dir.join(indexed_name("mask", r.frame_index, "png")))?;
            Ok(FrameLabel {
                frame_index: r.frame_index,
                bbox: r.bbox,
                stationary: r.stationary,
                mask,
            })
        })
        .collect()
}
