//! Motion-supervised catheter segmentation toolkit.
//!
//! Moving instruments in otherwise static ultrasound-like sequences are
//! located by dense optical flow. Thresholded flow becomes a binary
//! pseudo-label per frame, and a bounding-box tracking loop drives any
//! [`inference::Segmenter`] across a sequence. A procedural generator
//! provides sequences with exact ground truth, and [`eval`] scores runs.
//!
//! Stages, in pipeline order:
//!
//! - [`synth`]: synthetic sequences and constant-shift flow oracles
//! - [`flow`]: Farnebäck-style and block-matching flow
//! - [`labeling`]: flow to mask, stationary-frame detection, boxes
//! - [`inference`]: the box-tracking segmentation loop
//! - [`eval`]: Dice, MAE, endpoint error and CSV reports
//! - [`pipeline`]: end-to-end runs writing every artifact to disk

pub mod error;
pub mod eval;
pub mod flow;
pub mod inference;
pub mod io;
pub mod labeling;
pub mod pipeline;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    clamp_box, BoundingBox, FlowField, Frame, Mask, Sequence, SequenceKind, ThresholdConfig,
};
