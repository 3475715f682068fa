//! `motionseg`: synthetic catheter sequences, optical flow, pseudo-labels,
//! box-tracked inference and evaluation from one command line.
//!
//! Exit codes: 0 success, 1 invalid input or configuration (including bad
//! flags), 2 filesystem failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use motionseg_core::eval::{evaluate_run, write_report, EvalPolicy};
use motionseg_core::flow::{
    flow_sequence, BackendKind, CorrelationParams, FlowBackend, FlowParams,
};
use motionseg_core::inference::{run_inference, FlowThresholdSegmenter, InferenceConfig};
use motionseg_core::io::{list_images, load_sequence, read_mask, RunManifest};
use motionseg_core::labeling::{generate_labels, resolve_threshold, write_labels};
use motionseg_core::pipeline::{
    check_output_dir, create_dir, read_flows, read_indexed_masks, run_pipeline, with_workers,
    write_flows, write_predictions, write_sequence, RunConfig, REPORT_FILE, TRACE_FILE,
};
use motionseg_core::synth::{generate, SynthConfig};
use motionseg_core::{Error, Result, SequenceKind, ThresholdConfig};

/// Environment variable naming the directory under which default outputs go.
const OUTPUT_ROOT_ENV: &str = "MOTIONSEG_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(
    name = "motionseg",
    version,
    about = "Self-supervised catheter motion segmentation toolkit"
)]
struct Cli {
    /// Seed for every random stage; overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic sequence with ground-truth masks.
    Synth(SynthArgs),
    /// Estimate optical flow between adjacent frames.
    Flow(FlowArgs),
    /// Threshold flow into pseudo-label masks.
    Label(LabelArgs),
    /// Run the box-tracking inference loop.
    Infer(InferArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Measure throughput on a synthetic sequence.
    Bench(BenchArgs),
    /// Run synth, flow, label, infer and eval end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON file with a (partial) synthetic scene configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the catheter-touching-wall stress scene as the base configuration.
    #[arg(long)]
    touching_wall: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendChoice::Farneback)]
    backend: BackendChoice,
    /// Pyramid levels (farneback).
    #[arg(long)]
    levels: Option<usize>,
    /// Patch radius (block matching).
    #[arg(long)]
    k: Option<usize>,
    /// Search radius (block matching).
    #[arg(long)]
    d: Option<usize>,
    /// Parabolic subpixel refinement (block matching).
    #[arg(long)]
    subpixel: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BackendChoice {
    Farneback,
    #[value(alias = "block-matching")]
    Block,
}

impl BackendArgs {
    fn backend(&self) -> FlowBackend {
        let mut fb = FlowParams::default();
        if let Some(levels) = self.levels {
            fb.pyramid_levels = levels;
        }
        let mut bm = CorrelationParams::default();
        if let Some(k) = self.k {
            bm.k = k;
        }
        if let Some(d) = self.d {
            bm.d = d;
        }
        bm.subpixel = self.subpixel;
        let kind = match self.backend {
            BackendChoice::Farneback => BackendKind::Farneback,
            BackendChoice::Block => BackendKind::BlockMatching,
        };
        FlowBackend::from_parts(kind, fb, bm)
    }
}

#[derive(Args, Debug)]
struct FlowArgs {
    /// Sequence directory (manifest.json or frame_* images).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum KindChoice {
    Synthetic,
    Phantom,
}

impl From<KindChoice> for SequenceKind {
    fn from(k: KindChoice) -> Self {
        match k {
            KindChoice::Synthetic => SequenceKind::Synthetic,
            KindChoice::Phantom => SequenceKind::Phantom,
        }
    }
}

#[derive(Args, Debug)]
struct LabelArgs {
    /// Sequence directory.
    #[arg(long)]
    input: PathBuf,
    /// Directory of flow_*.flo files.
    #[arg(long)]
    flows: PathBuf,
    /// Sequence kind; selects the default threshold. Defaults to the manifest's kind.
    #[arg(long, value_enum)]
    kind: Option<KindChoice>,
    /// Flow magnitude threshold in pixels per frame.
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long, default_value_t = motionseg_core::types::DEFAULT_MIN_COMPONENT_AREA)]
    min_area: usize,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SegmenterChoice {
    FlowThreshold,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Sequence directory.
    #[arg(long)]
    input: PathBuf,
    /// Directory of flow_*.flo files: the initial-frame search and the
    /// segmenter's motion evidence. Backend flags apply to pairs they do not cover.
    #[arg(long)]
    flows: PathBuf,
    #[arg(long, value_enum, default_value_t = SegmenterChoice::FlowThreshold)]
    segmenter: SegmenterChoice,
    #[arg(long)]
    s_max: Option<usize>,
    #[arg(long)]
    expansion_base: Option<f64>,
    #[arg(long)]
    validity_area: Option<usize>,
    #[arg(long, value_enum)]
    kind: Option<KindChoice>,
    /// Segmenter flow threshold in pixels per frame.
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long, default_value_t = motionseg_core::types::DEFAULT_MIN_COMPONENT_AREA)]
    min_area: usize,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of predicted masks.
    #[arg(long)]
    pred_dir: PathBuf,
    /// Directory of gt_* ground-truth masks.
    #[arg(long)]
    gt_dir: PathBuf,
    /// File-name prefix of the predicted masks (`pred` for inference, `mask` for labels).
    #[arg(long, default_value = "pred")]
    pred_prefix: String,
    #[arg(long, default_value = "all-frames")]
    policy: String,
    /// Method name written in the report.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append the published reference rows (approximate) to the report.
    #[arg(long)]
    with_paper_refs: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BenchStage {
    Flow,
    Pipeline,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    /// Square frame side in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// What to time: flow estimation only or the whole in-memory pipeline.
    #[arg(long, value_enum, default_value_t = BenchStage::Flow)]
    stage: BenchStage,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let jobs = cli.jobs;
    let result = with_workers(jobs, move || run(cli)).and_then(|r| r);
    match result {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Flow(a) => flow(a),
        Command::Label(a) => label(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a, cli.seed),
        Command::Pipeline(a) => pipeline(a, cli.seed),
    }
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn out_dir_or(arg: Option<PathBuf>, stage: &str) -> PathBuf {
    arg.unwrap_or_else(|| output_root().join(stage))
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let mut cfg = synth_config(a.config.as_deref(), a.touching_wall)?;
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    let out = out_dir_or(a.out_dir, "synth");
    check_output_dir(&out)?;
    let seq = generate(&cfg)?;
    let (frames, gt) = write_sequence(&seq, &out)?;
    let manifest = RunManifest {
        name: seq.name().to_string(),
        kind: Some(seq.kind()),
        seed: Some(cfg.rng_seed),
        frames,
        ground_truth: gt,
        ..RunManifest::default()
    };
    manifest.save(&out)?;
    Ok(vec![
        out.clone(),
        out.join(motionseg_core::io::MANIFEST_FILE),
    ])
}

/// The default scene at the size requested in `path` (if any), with the
/// file's other fields laid over it.
fn synth_config(path: Option<&Path>, touching_wall: bool) -> Result<SynthConfig> {
    match path {
        Some(p) => scaled_synth(motionseg_core::io::read_json(p)?, touching_wall, p),
        None => {
            let base = SynthConfig::default();
            Ok(if touching_wall {
                base.with_touching_wall()
            } else {
                base
            })
        }
    }
}

/// Lays `patch` over the default scene resized to the patch's dimensions.
fn scaled_synth(patch: serde_json::Value, touching_wall: bool, path: &Path) -> Result<SynthConfig> {
    let d = SynthConfig::default();
    let size = |key: &str, default: usize| {
        patch
            .get(key)
            .and_then(|v| v.as_u64())
            .map_or(default, |v| v as usize)
    };
    let mut base = SynthConfig::scaled(
        size("width", d.width),
        size("height", d.height),
        size("n_frames", d.n_frames),
    );
    if touching_wall {
        base = base.with_touching_wall();
    }
    merge_json(&base, patch, path)
}

/// A run configuration file; the `synth` section is resolved like `synth --config`.
fn run_config(path: &Path) -> Result<RunConfig> {
    let mut patch: serde_json::Value = motionseg_core::io::read_json(path)?;
    let synth = patch.as_object_mut().and_then(|o| o.remove("synth"));
    let mut cfg: RunConfig = merge_json(&RunConfig::default(), patch, path)?;
    if let Some(synth) = synth {
        cfg.synth = scaled_synth(synth, false, path)?;
    }
    Ok(cfg)
}

/// Overlays the JSON object `patch` (read from `path`) on `base`, so partial files work.
fn merge_json<T>(base: &T, patch: serde_json::Value, path: &Path) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut value = serde_json::to_value(base).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    match (&mut value, patch) {
        (serde_json::Value::Object(dst), serde_json::Value::Object(src)) => {
            for (k, v) in src {
                dst.insert(k, v);
            }
        }
        _ => {
            return Err(Error::Config(format!(
                "{} must contain a JSON object",
                path.display()
            )))
        }
    }
    serde_json::from_value(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn flow(a: FlowArgs) -> Result<Vec<PathBuf>> {
    let backend = a.backend.backend();
    backend.validate()?;
    let out = out_dir_or(a.out_dir, "flow");
    check_output_dir(&out)?;
    let seq = load_sequence(&a.input, SequenceKind::Synthetic)?;
    let flows = flow_sequence(&seq, &backend)?;
    let names = write_flows(&flows, &out)?;
    Ok(names.into_iter().map(|n| out.join(n)).collect())
}

fn label(a: LabelArgs) -> Result<Vec<PathBuf>> {
    let out = out_dir_or(a.out_dir, "label");
    check_output_dir(&out)?;
    let seq = load_sequence(&a.input, SequenceKind::Synthetic)?;
    let kind = a.kind.map(SequenceKind::from).unwrap_or(seq.kind());
    let cfg = ThresholdConfig {
        threshold: resolve_threshold(kind, a.threshold),
        min_component_area: a.min_area,
    };
    cfg.validate()?;
    let flows = read_flows(&a.flows)?;
    let labels = generate_labels(&seq, &flows, &cfg)?;
    let names = write_labels(&labels, &out)?;
    let mut written: Vec<PathBuf> = names.into_iter().map(|n| out.join(n)).collect();
    written.push(out.join(motionseg_core::labeling::LABELS_FILE));
    Ok(written)
}

fn infer(a: InferArgs) -> Result<Vec<PathBuf>> {
    let SegmenterChoice::FlowThreshold = a.segmenter;
    let defaults = InferenceConfig::default();
    let icfg = InferenceConfig {
        s_max: a.s_max.unwrap_or(defaults.s_max),
        expansion_base: a.expansion_base.unwrap_or(defaults.expansion_base),
        validity_area: a.validity_area.unwrap_or(defaults.validity_area),
        threshold: ThresholdConfig {
            min_component_area: a.min_area,
            ..defaults.threshold
        },
    };
    icfg.validate()?;
    let backend = a.backend.backend();
    backend.validate()?;
    let out = out_dir_or(a.out_dir, "infer");
    check_output_dir(&out)?;
    let seq = load_sequence(&a.input, SequenceKind::Synthetic)?;
    let kind = a.kind.map(SequenceKind::from).unwrap_or(seq.kind());
    let tcfg = ThresholdConfig {
        threshold: resolve_threshold(kind, a.threshold),
        min_component_area: a.min_area,
    };
    let flows = read_flows(&a.flows)?;
    let mut seg = FlowThresholdSegmenter::new(backend, tcfg)?;
    seg.prime(&seq, &flows)?;
    let run = run_inference(&seq, &flows, &mut seg, &icfg)?;
    let names = write_predictions(&run, &out)?;
    let mut written: Vec<PathBuf> = names.into_iter().map(|n| out.join(n)).collect();
    written.push(out.join(TRACE_FILE));
    Ok(written)
}

fn eval(a: EvalArgs) -> Result<Vec<PathBuf>> {
    let policy: EvalPolicy = a.policy.parse()?;
    let out = a
        .out
        .unwrap_or_else(|| output_root().join("eval").join(REPORT_FILE));
    if out.is_dir() {
        return Err(Error::Config(format!(
            "report path {} is a directory",
            out.display()
        )));
    }
    let gt_paths = list_images(&a.gt_dir, "gt_")?;
    if gt_paths.is_empty() {
        return Err(Error::Data(format!(
            "no gt_* masks in {}",
            a.gt_dir.display()
        )));
    }
    let gt = gt_paths.iter().map(read_mask).collect::<Result<Vec<_>>>()?;
    let preds = read_indexed_masks(&a.pred_dir, &a.pred_prefix, gt.len())?;
    let method = a.method.unwrap_or_else(|| a.pred_prefix.clone());
    let report = evaluate_run(method, &preds, &gt, policy)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_report(&[report], &out, a.with_paper_refs)?;
    Ok(vec![out])
}

fn bench(a: BenchArgs, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let backend = a.backend.backend();
    backend.validate()?;
    let mut synth = SynthConfig::scaled(a.size, a.size, a.frames);
    if let Some(s) = seed {
        synth.rng_seed = s;
    }
    synth.validate()?;
    let label = match a.backend.backend {
        BackendChoice::Farneback => "farneback",
        BackendChoice::Block => "block",
    };
    let seq = generate(&synth)?;
    let start = Instant::now();
    let stage = match a.stage {
        BenchStage::Flow => {
            flow_sequence(&seq, &backend)?;
            "flow"
        }
        BenchStage::Pipeline => {
            let cfg = RunConfig {
                synth,
                backend: match a.backend.backend {
                    BackendChoice::Farneback => BackendKind::Farneback,
                    BackendChoice::Block => BackendKind::BlockMatching,
                },
                farneback: match backend {
                    FlowBackend::Farneback(p) => p,
                    _ => FlowParams::default(),
                },
                block_matching: match backend {
                    FlowBackend::BlockMatching(p) => p,
                    _ => CorrelationParams::default(),
                },
                ..RunConfig::default()
            };
            motionseg_core::pipeline::run_in_memory(&cfg)?;
            "pipeline"
        }
    };
    let secs = start.elapsed().as_secs_f64();
    println!(
        "{stage} {label} {}x{} x {} frames on {} workers: {:.2} s, {:.2} frames/sec",
        a.size,
        a.size,
        a.frames,
        rayon::current_num_threads(),
        secs,
        a.frames as f64 / secs
    );
    Ok(Vec::new())
}

fn pipeline(a: PipelineArgs, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let mut cfg = match &a.config {
        Some(path) => run_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.synth.rng_seed = s;
    }
    let out = a
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| output_root().join("pipeline"));
    let outcome = run_pipeline(&cfg, &out)?;
    Ok(outcome.written)
}
