//! Dense optical flow between frame pairs.

mod correlation;
mod farneback;
pub(crate) mod plane;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use correlation::{
    block_matching_flow, build_cost_volume, correlate, normalized_cost_volume, pad_reflect,
    CorrelationParams, CostVolume, Pixel,
};
pub use farneback::{farneback_flow, FlowParams};

use crate::error::Result;
use crate::types::{FlowField, Frame, Sequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Farneback,
    #[serde(alias = "block")]
    BlockMatching,
}

impl std::str::FromStr for BackendKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "farneback" => Ok(BackendKind::Farneback),
            "block" | "block_matching" | "block-matching" => Ok(BackendKind::BlockMatching),
            other => Err(crate::Error::Argument(format!(
                "unknown flow backend '{other}'"
            ))),
        }
    }
}

/// A flow estimator together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowBackend {
    Farneback(FlowParams),
    BlockMatching(CorrelationParams),
}

impl Default for FlowBackend {
    fn default() -> Self {
        FlowBackend::Farneback(FlowParams::default())
    }
}

impl FlowBackend {
    pub fn from_parts(kind: BackendKind, farneback: FlowParams, block: CorrelationParams) -> Self {
        match kind {
            BackendKind::Farneback => FlowBackend::Farneback(farneback),
            BackendKind::BlockMatching => FlowBackend::BlockMatching(block),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FlowBackend::Farneback(p) => p.validate(),
            FlowBackend::BlockMatching(p) => p.validate(),
        }
    }

    pub fn estimate(&self, prev: &Frame, next: &Frame) -> Result<FlowField> {
        match self {
            FlowBackend::Farneback(p) => farneback_flow(prev, next, p),
            FlowBackend::BlockMatching(p) => block_matching_flow(prev, next, p),
        }
    }
}

/// Forward flow between adjacent frames: entry `i` is estimated from
/// `(frames[i], frames[i + 1])` and carries the motion evidence for frame `i + 1`.
pub fn flow_sequence(seq: &Sequence, backend: &FlowBackend) -> Result<Vec<FlowField>> {
    backend.validate()?;
    let frames = seq.frames();
    (0..frames.len() - 1)
        .into_par_iter()
        .map(|i| backend.estimate(&frames[i], &frames[i + 1]))
        .collect()
}
