//! End-to-end runs: synth -> flow -> label -> infer -> eval, each stage
//! writing its artifacts under one output directory.
//!
//! Layout of a pipeline run:
//!
//! ```text
//! <out>/manifest.json
//! <out>/frames/frame_%05d.png, gt_%05d.png
//! <out>/flows/flow_%05d.flo          (flow_i: frame i -> frame i+1)
//! <out>/labels/mask_%05d.png, labels.json
//! <out>/predictions/pred_%05d.png, inference_trace.json
//! <out>/report.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_run, write_report, EvalPolicy, MetricReport};
use crate::flow::{flow_sequence, BackendKind, CorrelationParams, FlowBackend, FlowParams};
use crate::inference::{
    run_full_frame, run_inference, FlowThresholdSegmenter, InferenceConfig, InferenceRun, Segmenter,
};
use crate::io::{
    indexed_name, list_images, read_flow, write_flow, write_frame, write_json, write_mask,
    RunManifest,
};
use crate::labeling::{generate_labels, resolve_threshold, write_labels, FrameLabel};
use crate::synth::{generate, SynthConfig};
use crate::types::{
    FlowField, Mask, Sequence, SequenceKind, ThresholdConfig, DEFAULT_MIN_COMPONENT_AREA,
};

pub const TRACE_FILE: &str = "inference_trace.json";
pub const REPORT_FILE: &str = "report.csv";

/// Everything one pipeline run needs. Every field has a default, so `{}`
/// is a complete configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub backend: BackendKind,
    pub farneback: FlowParams,
    pub block_matching: CorrelationParams,
    /// Overrides the per-kind default flow threshold.
    pub threshold: Option<f32>,
    pub min_component_area: usize,
    /// Loop parameters. Its `threshold` drives the initial-frame search; the
    /// component-area floor comes from `min_component_area`.
    pub inference: InferenceConfig,
    pub policy: EvalPolicy,
    pub with_paper_refs: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            backend: BackendKind::Farneback,
            farneback: FlowParams::default(),
            block_matching: CorrelationParams::default(),
            threshold: None,
            min_component_area: DEFAULT_MIN_COMPONENT_AREA,
            inference: InferenceConfig::default(),
            policy: EvalPolicy::AllFrames,
            with_paper_refs: false,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn flow_backend(&self) -> FlowBackend {
        FlowBackend::from_parts(self.backend, self.farneback, self.block_matching)
    }

    pub fn threshold_config(&self, kind: SequenceKind) -> ThresholdConfig {
        ThresholdConfig {
            threshold: resolve_threshold(kind, self.threshold),
            min_component_area: self.min_component_area,
        }
    }

    /// The inference settings with the shared component-area floor applied
    /// to the initial-frame search.
    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig {
            threshold: ThresholdConfig {
                min_component_area: self.min_component_area,
                ..self.inference.threshold
            },
            ..self.inference
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.flow_backend().validate()?;
        self.threshold_config(SequenceKind::Synthetic).validate()?;
        self.inference_config().validate()
    }
}

/// Fails when `dir` exists but is not a directory, before anything is written.
pub fn check_output_dir(dir: &Path) -> Result<()> {
    if dir.exists() && !dir.is_dir() {
        return Err(Error::Config(format!(
            "output path {} exists and is not a directory",
            dir.display()
        )));
    }
    Ok(())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs `f` on a pool of `jobs` workers (all cores when `None`).
pub fn with_workers<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Writes frames (and ground truth) into `dir`; returns their relative names.
pub fn write_sequence(seq: &Sequence, dir: &Path) -> Result<(Vec<String>, Vec<String>)> {
    create_dir(dir)?;
    let frames = seq
        .frames()
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let name = indexed_name("frame", i, "png");
            write_frame(f, dir.join(&name))?;
            Ok(name)
        })
        .collect::<Result<Vec<_>>>()?;
    let gt = match seq.ground_truth() {
        None => Vec::new(),
        Some(masks) => masks
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let name = indexed_name("gt", i, "png");
                write_mask(m, dir.join(&name))?;
                Ok(name)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok((frames, gt))
}

pub fn write_flows(flows: &[FlowField], dir: &Path) -> Result<Vec<String>> {
    create_dir(dir)?;
    flows
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let name = indexed_name("flow", i, "flo");
            write_flow(f, dir.join(&name))?;
            Ok(name)
        })
        .collect()
}

/// Reads every `flow_*.flo` in `dir`, in name order.
pub fn read_flows(dir: &Path) -> Result<Vec<FlowField>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_flo = p.extension().is_some_and(|e| e == "flo");
        let named = p
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("flow_"));
        if is_flo && named {
            paths.push(p);
        }
    }
    paths.sort();
    paths.iter().map(read_flow).collect()
}

/// Writes `pred_%05d.png` for every present mask plus the per-frame trace.
pub fn write_predictions(run: &InferenceRun, dir: &Path) -> Result<Vec<String>> {
    create_dir(dir)?;
    let names = run
        .masks
        .par_iter()
        .enumerate()
        .filter_map(|(i, m)| m.as_ref().map(|m| (i, m)))
        .map(|(i, m)| {
            let name = indexed_name("pred", i, "png");
            write_mask(m, dir.join(&name))?;
            Ok(name)
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&run.trace, dir.join(TRACE_FILE))?;
    Ok(names)
}

/// Reads `<prefix>_NNNNN.png` masks from `dir` into a frame-indexed list of
/// length `len`; frames without a file are `None`.
pub fn read_indexed_masks(dir: &Path, prefix: &str, len: usize) -> Result<Vec<Option<Mask>>> {
    let mut out = vec![None; len];
    for path in list_images(dir, &format!("{prefix}_"))? {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let index: usize = stem[prefix.len() + 1..].parse().map_err(|_| {
            Error::Data(format!("cannot parse frame index from {}", path.display()))
        })?;
        if index >= len {
            return Err(Error::Data(format!(
                "{} refers to frame {index}, but only {len} ground-truth frames exist",
                path.display()
            )));
        }
        out[index] = Some(crate::io::read_mask(&path)?);
    }
    Ok(out)
}

/// Artifacts and scores of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub sequence: Sequence,
    pub flows: Vec<FlowField>,
    pub labels: Vec<FrameLabel>,
    pub tracked: InferenceRun,
    pub full_frame: InferenceRun,
    pub reports: Vec<MetricReport>,
    pub written: Vec<PathBuf>,
}

pub const METHOD_PSEUDO_LABELS: &str = "pseudo-labels";
pub const METHOD_TRACKED: &str = "flow-threshold+box-tracking";
pub const METHOD_FULL_FRAME: &str = "flow-threshold full-frame";

/// Scores pseudo-labels and both inference variants against ground truth.
pub fn score_run(
    gt: &[Mask],
    labels: &[FrameLabel],
    tracked: &InferenceRun,
    full_frame: &InferenceRun,
    policy: EvalPolicy,
) -> Result<Vec<MetricReport>> {
    let label_masks: Vec<Option<Mask>> = labels.iter().map(|l| Some(l.mask.clone())).collect();
    Ok(vec![
        evaluate_run(METHOD_PSEUDO_LABELS, &label_masks, gt, policy)?,
        evaluate_run(METHOD_TRACKED, &tracked.masks, gt, policy)?,
        evaluate_run(METHOD_FULL_FRAME, &full_frame.masks, gt, policy)?,
    ])
}

/// Runs every stage in memory, without touching the filesystem.
pub fn run_in_memory(cfg: &RunConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let seq = generate(&cfg.synth)?;
    let backend = cfg.flow_backend();
    let flows = flow_sequence(&seq, &backend)?;
    let tcfg = cfg.threshold_config(seq.kind());
    let icfg = cfg.inference_config();
    let labels = generate_labels(&seq, &flows, &tcfg)?;
    let mut seg = FlowThresholdSegmenter::new(backend, tcfg)?;
    seg.prime(&seq, &flows)?;
    let tracked = run_inference(&seq, &flows, &mut seg as &mut dyn Segmenter, &icfg)?;
    let full_frame = run_full_frame(&seq, &mut seg, &icfg)?;
    let gt = seq
        .ground_truth()
        .expect("synthetic sequences carry ground truth");
    let reports = score_run(gt, &labels, &tracked, &full_frame, cfg.policy)?;
    Ok(PipelineOutcome {
        sequence: seq,
        flows,
        labels,
        tracked,
        full_frame,
        reports,
        written: Vec::new(),
    })
}

/// Full pipeline run writing all artifacts under `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    check_output_dir(out)?;
    let mut outcome = run_in_memory(cfg)?;
    create_dir(out)?;

    let seq = &outcome.sequence;
    let (frames, gt) = write_sequence(seq, &out.join("frames"))?;
    let flows = write_flows(&outcome.flows, &out.join("flows"))?;
    let masks = write_labels(&outcome.labels, out.join("labels"))?;
    let preds = write_predictions(&outcome.tracked, &out.join("predictions"))?;
    let report = out.join(REPORT_FILE);
    write_report(&outcome.reports, &report, cfg.with_paper_refs)?;

    let prefixed =
        |dir: &str, names: Vec<String>| names.into_iter().map(|n| format!("{dir}/{n}")).collect();
    let manifest = RunManifest {
        name: seq.name().to_string(),
        kind: Some(seq.kind()),
        threshold: Some(cfg.threshold_config(seq.kind())),
        seed: Some(cfg.synth.rng_seed),
        frames: prefixed("frames", frames),
        ground_truth: prefixed("frames", gt),
        flows: prefixed("flows", flows),
        masks: prefixed("labels", masks),
        predictions: prefixed("predictions", preds),
        labels: Some(format!("labels/{}", crate::labeling::LABELS_FILE)),
        inference_trace: Some(format!("predictions/{TRACE_FILE}")),
        report: Some(REPORT_FILE.to_string()),
    };
    manifest.save(out)?;
    // the output location is not part of the run, so identical runs stay byte-identical
    let recorded = RunConfig {
        output_dir: None,
        ..cfg.clone()
    };
    write_json(&recorded, out.join("config.json"))?;

    outcome.written = vec![
        out.join("frames"),
        out.join("flows"),
        out.join("labels"),
        out.join("predictions"),
        report,
        out.join(crate::io::MANIFEST_FILE),
        out.join("config.json"),
    ];
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::INITIAL_SEARCH_THRESHOLD;

    #[test]
    fn empty_json_is_the_default_config() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn threshold_override_precedence() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.threshold_config(SequenceKind::Phantom).threshold, 1.0);
        cfg.threshold = Some(0.5);
        assert_eq!(cfg.threshold_config(SequenceKind::Phantom).threshold, 0.5);
        assert_eq!(cfg.threshold_config(SequenceKind::Synthetic).threshold, 0.5);
        assert_eq!(
            cfg.inference_config().threshold.threshold,
            INITIAL_SEARCH_THRESHOLD
        );
    }

    #[test]
    fn jobs_zero_rejected() {
        assert!(with_workers(Some(0), || ()).is_err());
        assert_eq!(
            with_workers(Some(2), rayon::current_num_threads).unwrap(),
            2
        );
    }
}
