//! Operator surface: dataset synthesis, staged training, evaluation,
//! inference, the attention cost benchmark, and canned ablation sweeps.
//!
//! Every command exits nonzero with a single-line diagnostic on error. A
//! JSON config file (`--config`) may supply any flag's default, and the
//! `RVOS_SEED` environment variable supplies a seed when neither a flag nor
//! the config names one.

mod bench;
mod checkpoint;
mod config;
mod dataset;
mod report;
mod util;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rvos_core::eval::{evaluate, post_appearance_mean_j, EvalSummary};
use rvos_core::model::{Model, ModelConfig};
use rvos_core::params::ParamStore;
use rvos_core::pipeline::{CmeMode, Pipeline, PipelineConfig};
use rvos_core::rng::Rng;
use rvos_core::synth::{Frame, Lexicon, SynthConfig, SyntheticVideo};
use rvos_core::train::{
    detector_label_accuracy, pretrain_iou, run_adapters, run_detector, run_pretrain, StageReport,
    TrainConfig,
};

use config::{resolve, resolve_seed, ArchConfig, FileConfig};
use report::AblationRow;

const DEFAULT_SEED: u64 = 7;
const DEFAULT_BATCH: usize = 2;
const DEFAULT_COUNT: usize = 20;
const PRETRAIN_STEPS: usize = 500;
const PRETRAIN_LR: f64 = 3e-3;
const ADAPTER_STEPS: usize = 240;
const ADAPTER_LR: f64 = 2e-3;
const ADAPTER_WARM: usize = 60;
const DETECTOR_STEPS: usize = 160;
const DETECTOR_LR: f64 = 3e-3;

#[derive(Parser)]
#[command(
    name = "rvos",
    version,
    about = "Streaming text-referred video segmentation at desk scale"
)]
struct Cli {
    /// JSON file supplying defaults for any flag
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic captioned-video dataset
    Synth(SynthArgs),
    /// Stage A: pretrain the segmentation backbone with point prompts
    Pretrain(PretrainArgs),
    /// Stage B: train the cross-modal adapters and caption prompt head
    Train(TrainArgs),
    /// Stage C: train the missed-object detection head
    TrainCme(TrainCmeArgs),
    /// Score a checkpoint on a dataset (region J, boundary F)
    Eval(EvalArgs),
    /// Segment a directory of PPM frames against a caption
    Infer(InferArgs),
    /// Pair counts and wall time: windowed vs dense attention
    BenchHsa(BenchArgs),
    /// Canned train/eval sweeps emitting a summary CSV
    Ablate(AblateArgs),
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a, &file),
        Cmd::Pretrain(a) => cmd_pretrain(a, &file),
        Cmd::Train(a) => cmd_train(a, &file),
        Cmd::TrainCme(a) => cmd_train_cme(a, &file),
        Cmd::Eval(a) => cmd_eval(a, &file),
        Cmd::Infer(a) => cmd_infer(a, &file),
        Cmd::BenchHsa(a) => cmd_bench(a),
        Cmd::Ablate(a) => cmd_ablate(a, &file),
    }
}

// ---------------------------------------------------------------- synth

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Scenario tag, comma-separated list (videos cycle through), or `all`
    #[arg(long)]
    scenario: Option<String>,
    /// Number of videos
    #[arg(long)]
    count: Option<usize>,
    /// Generator seed
    #[arg(long)]
    seed: Option<u64>,
    /// Frames per video
    #[arg(long)]
    t_v: Option<usize>,
    /// Distractor objects per video
    #[arg(long)]
    distractors: Option<usize>,
}

fn cmd_synth(a: SynthArgs, file: &FileConfig) -> Result<()> {
    let seed = resolve_seed(a.seed, file.seed, DEFAULT_SEED)?;
    let flag = resolve(a.scenario, file.scenario.clone(), String::from("all"));
    let scenarios = dataset::parse_scenarios(&flag)?;
    let count = resolve(a.count, file.count, DEFAULT_COUNT);
    let base = SynthConfig::default();
    let cfg = SynthConfig {
        t_v: resolve(a.t_v, file.t_v, base.t_v),
        n_distractors: resolve(a.distractors, file.distractors, base.n_distractors),
        ..base
    };
    let index = dataset::write_dataset(&a.out, seed, &scenarios, &cfg, count)?;
    println!(
        "synth: wrote {} videos ({} frames each, scenario {}) to {} with seed {}",
        index.videos.len(),
        cfg.t_v,
        index.scenario,
        a.out.display(),
        seed
    );
    Ok(())
}

// ------------------------------------------------------------- training

#[derive(Args)]
struct PretrainArgs {
    /// Training dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Videos per optimizer step
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional training-curve CSV
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Stage-A checkpoint to start from
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Steps trained on single-frame clips before full clips
    #[arg(long)]
    warm_steps: Option<usize>,
    /// Skip the windowed spatio-temporal attention stage
    #[arg(long)]
    no_hsa: bool,
    /// Skip visual-to-text modulation
    #[arg(long)]
    no_vta: bool,
    /// Skip text-to-visual modulation
    #[arg(long)]
    no_tva: bool,
    /// Adapters reduced to per-level bottleneck MLPs (implies the three above)
    #[arg(long)]
    mlp_only: bool,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCmeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Stage-B checkpoint to start from
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log: Option<PathBuf>,
}

fn check_video_dims(videos: &[SyntheticVideo], cfg: &ModelConfig) -> Result<()> {
    if let Some(v) = videos.first() {
        if v.h() != cfg.enc.input_h || v.w() != cfg.enc.input_w {
            bail!(
                "dataset frames are {}x{} but the model expects {}x{}",
                v.h(),
                v.w(),
                cfg.enc.input_h,
                cfg.enc.input_w
            );
        }
    }
    Ok(())
}

fn divergence_note(report: &StageReport) -> String {
    match report.diverged_at {
        Some(step) => format!(" (diverged at step {step}; rolled back to last good state)"),
        None => String::new(),
    }
}

fn cmd_pretrain(a: PretrainArgs, file: &FileConfig) -> Result<()> {
    let loaded = dataset::load_dataset(&a.data)?;
    let model_cfg = ModelConfig::default();
    check_video_dims(&loaded.videos, &model_cfg)?;
    let seed = resolve_seed(a.seed, file.seed, DEFAULT_SEED)?;
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let model = Model::register(&mut store, model_cfg, &mut rng)?;
    let tcfg = TrainConfig {
        lr: resolve(a.lr, file.lr, PRETRAIN_LR),
        steps: resolve(a.steps, file.steps, PRETRAIN_STEPS),
        batch: resolve(a.batch, file.batch, DEFAULT_BATCH),
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = run_pretrain(&mut store, &model, &loaded.videos, &tcfg)?;
    let probe = &loaded.videos[..loaded.videos.len().min(8)];
    let iou = pretrain_iou(&store, &model, probe)?;
    let arch = ArchConfig::from_model_config(&model.cfg);
    checkpoint::save(&a.out, &store, &arch, "pretrain")?;
    if let Some(log) = &a.log {
        report::write_train_csv(log, &[report.clone()])?;
    }
    println!(
        "pretrain: {} steps on {} videos ({}) in {:.1}s, loss {:.4} -> {:.4}, \
         point-prompt iou {:.3}{} -> {}",
        tcfg.steps,
        loaded.videos.len(),
        loaded.index.scenario,
        start.elapsed().as_secs_f64(),
        report.initial_loss(),
        report.final_loss(),
        iou,
        divergence_note(&report),
        a.out.display()
    );
    Ok(())
}

/// Apply the ablation flags to a model configuration's adapter switches.
fn apply_ablation_flags(cfg: &mut ModelConfig, no_hsa: bool, no_vta: bool, no_tva: bool, mlp_only: bool) {
    if mlp_only {
        cfg.cmt.hsa = false;
        cfg.cmt.vta = false;
        cfg.cmt.tva = false;
        return;
    }
    if no_hsa {
        cfg.cmt.hsa = false;
    }
    if no_vta {
        cfg.cmt.vta = false;
    }
    if no_tva {
        cfg.cmt.tva = false;
    }
}

fn cmd_train(a: TrainArgs, file: &FileConfig) -> Result<()> {
    let loaded = dataset::load_dataset(&a.data)?;
    let (mut store, arch, from_stage) = checkpoint::load(&a.init)?;
    let mut model_cfg = arch.to_model_config();
    apply_ablation_flags(
        &mut model_cfg,
        a.no_hsa || file.no_hsa.unwrap_or(false),
        a.no_vta || file.no_vta.unwrap_or(false),
        a.no_tva || file.no_tva.unwrap_or(false),
        a.mlp_only || file.mlp_only.unwrap_or(false),
    );
    check_video_dims(&loaded.videos, &model_cfg)?;
    let model = Model::from_store(&store, model_cfg)?;
    let seed = resolve_seed(a.seed, file.seed, DEFAULT_SEED)?;
    let tcfg = TrainConfig {
        lr: resolve(a.lr, file.lr, ADAPTER_LR),
        steps: resolve(a.steps, file.steps, ADAPTER_STEPS),
        batch: resolve(a.batch, file.batch, DEFAULT_BATCH),
        warm_steps: resolve(a.warm_steps, file.warm_steps, ADAPTER_WARM),
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = run_adapters(&mut store, &model, &loaded.videos, &tcfg)?;
    let arch_out = ArchConfig::from_model_config(&model.cfg);
    checkpoint::save(&a.out, &store, &arch_out, "adapters")?;
    if let Some(log) = &a.log {
        report::write_train_csv(log, &[report.clone()])?;
    }
    println!(
        "train: {} steps in {:.1}s from {} checkpoint, loss {:.4} -> {:.4} \
         (hsa={} vta={} tva={}){} -> {}",
        tcfg.steps,
        start.elapsed().as_secs_f64(),
        from_stage,
        report.initial_loss(),
        report.final_loss(),
        model.cfg.cmt.hsa,
        model.cfg.cmt.vta,
        model.cfg.cmt.tva,
        divergence_note(&report),
        a.out.display()
    );
    Ok(())
}

fn cmd_train_cme(a: TrainCmeArgs, file: &FileConfig) -> Result<()> {
    let loaded = dataset::load_dataset(&a.data)?;
    let (mut store, arch, from_stage) = checkpoint::load(&a.init)?;
    let model_cfg = arch.to_model_config();
    check_video_dims(&loaded.videos, &model_cfg)?;
    let model = Model::from_store(&store, model_cfg)?;
    let seed = resolve_seed(a.seed, file.seed, DEFAULT_SEED)?;
    let tcfg = TrainConfig {
        lr: resolve(a.lr, file.lr, DETECTOR_LR),
        steps: resolve(a.steps, file.steps, DETECTOR_STEPS),
        batch: resolve(a.batch, file.batch, DEFAULT_BATCH),
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = run_detector(&mut store, &model, &loaded.videos, &tcfg)?;
    let probe = &loaded.videos[..loaded.videos.len().min(8)];
    let accuracy = detector_label_accuracy(&store, &model, probe)?;
    let arch_out = ArchConfig::from_model_config(&model.cfg);
    checkpoint::save(&a.out, &store, &arch_out, "detector")?;
    if let Some(log) = &a.log {
        report::write_train_csv(log, &[report.clone()])?;
    }
    println!(
        "train-cme: {} steps in {:.1}s from {} checkpoint, loss {:.4} -> {:.4}, \
         label accuracy {:.3}{} -> {}",
        tcfg.steps,
        start.elapsed().as_secs_f64(),
        from_stage,
        report.initial_loss(),
        report.final_loss(),
        accuracy,
        divergence_note(&report),
        a.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------ eval/infer

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Detection/fusion mode: `off`, `on` (gated), or `always`
    #[arg(long)]
    cme: Option<String>,
    /// Streaming clip length override
    #[arg(long)]
    window: Option<usize>,
    /// Fusion weight override
    #[arg(long)]
    lambda: Option<f64>,
    /// Per-video metrics CSV to write
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// Directory of PPM frames (or a dataset video directory)
    #[arg(long)]
    video: PathBuf,
    /// Referring caption, e.g. "the red square moving right"
    #[arg(long)]
    caption: String,
    #[arg(long)]
    ckpt: PathBuf,
    /// Output directory for masks and result.json
    #[arg(long)]
    out: PathBuf,
    /// Detection/fusion mode: `off`, `on` (gated), or `always`
    #[arg(long)]
    cme: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
}

fn parse_cme_mode(flag: &str) -> Result<CmeMode> {
    Ok(match flag {
        "off" => CmeMode::Off,
        "on" => CmeMode::Gated,
        "always" => CmeMode::Always,
        other => bail!("--cme must be off, on or always, got {other:?}"),
    })
}

/// Load a checkpoint and attach the model, refreshing the detector's
/// readout mirrors (they must equal the decoder's current weights).
fn load_model(ckpt: &Path) -> Result<(ParamStore, Model, String)> {
    let (mut store, arch, stage) = checkpoint::load(ckpt)?;
    let model = Model::from_store(&store, arch.to_model_config())?;
    model.cme.refresh_readout(&mut store)?;
    Ok((store, model, stage))
}

fn pipeline_config(
    model: &Model,
    cme: CmeMode,
    window: Option<usize>,
    lambda: Option<f64>,
) -> PipelineConfig {
    let mut pcfg = PipelineConfig::for_model(model);
    pcfg.cme = cme;
    if let Some(w) = window {
        pcfg.clip_len = w;
    }
    if let Some(l) = lambda {
        pcfg.lambda = l;
    }
    pcfg
}

fn summary_line(tag: &str, summary: &EvalSummary, post_j: f64, mode: CmeMode, window: usize) -> String {
    format!(
        "{tag}: videos={} frames={} mean_j={:.4} mean_f={:.4} mean_jf={:.4} \
         post_appearance_j={:.4} (cme={mode:?} window={window})",
        summary.videos.len(),
        summary.frames_scored,
        summary.mean_j,
        summary.mean_f,
        summary.mean_jf,
        post_j
    )
}

fn cmd_eval(a: EvalArgs, file: &FileConfig) -> Result<()> {
    let loaded = dataset::load_dataset(&a.data)?;
    let (store, model, _stage) = load_model(&a.ckpt)?;
    check_video_dims(&loaded.videos, &model.cfg)?;
    let mode = parse_cme_mode(&resolve(a.cme, file.cme.clone(), String::from("on")))?;
    let window = resolve(a.window, file.window, model.cfg.clip_len);
    let lambda = resolve(a.lambda, file.lambda, model.cfg.lambda);
    let pipeline = Pipeline::new(&model, pipeline_config(&model, mode, Some(window), Some(lambda)))?;
    let summary = evaluate(&pipeline, &store, &loaded.videos)?;
    let post_j = post_appearance_mean_j(&loaded.videos, &summary)?;
    if let Some(out) = &a.out {
        report::write_eval_csv(out, &summary)?;
    }
    println!("{}", summary_line("eval", &summary, post_j, mode, window));
    Ok(())
}

fn check_frame_dims(frames: &[Frame], cfg: &ModelConfig) -> Result<()> {
    if let Some(f) = frames.first() {
        if f.h != cfg.enc.input_h || f.w != cfg.enc.input_w {
            bail!(
                "frames are {}x{} but the model expects {}x{}",
                f.h,
                f.w,
                cfg.enc.input_h,
                cfg.enc.input_w
            );
        }
    }
    Ok(())
}

fn cmd_infer(a: InferArgs, file: &FileConfig) -> Result<()> {
    let frames = dataset::load_frames(&a.video)?;
    let (store, model, _stage) = load_model(&a.ckpt)?;
    check_frame_dims(&frames, &model.cfg)?;
    let (tokens, verb_flags) = Lexicon::standard().tokenize(&a.caption)?;
    let mode = parse_cme_mode(&resolve(a.cme, file.cme.clone(), String::from("on")))?;
    let pipeline =
        Pipeline::new(&model, pipeline_config(&model, mode, a.window.or(file.window), a.lambda.or(file.lambda)))?;
    let outputs = pipeline.run_video(&store, &frames, &tokens, &verb_flags)?;
    report::write_infer_outputs(&a.out, &a.caption, &outputs)?;
    let with_target = outputs.iter().filter(|o| !o.mask.is_blank()).count();
    let fusions = outputs.iter().filter(|o| o.fused).count();
    println!(
        "infer: {} frames, target found in {}, {} fusions (cme={:?}) -> {}",
        outputs.len(),
        with_target,
        fusions,
        mode,
        a.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------- bench-hsa

#[derive(Args)]
struct BenchArgs {
    /// Map size as H,W
    #[arg(long, default_value = "16,16")]
    hw: String,
    /// Clip length
    #[arg(long, default_value_t = 4)]
    t: usize,
    /// Sub-volume side
    #[arg(long, default_value_t = 4)]
    p: usize,
    /// Token width used for the timed runs
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Timed repetitions (median reported)
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let (h, w) = match a.hw.split_once(',') {
        Some((h, w)) => (
            h.trim().parse::<usize>().context("--hw height")?,
            w.trim().parse::<usize>().context("--hw width")?,
        ),
        None => bail!("--hw expects H,W (e.g. 16,16), got {:?}", a.hw),
    };
    let result = bench::run(h, w, a.t, a.p, a.width, a.reps)?;
    println!("{}", result.report_line());
    Ok(())
}

// --------------------------------------------------------------- ablate

#[derive(Args)]
struct AblateArgs {
    /// Which sweep: `table2` (adapter stages), `patch` (sub-volume sizes),
    /// or `cme` (detection/fusion modes)
    #[arg(long)]
    suite: String,
    /// Training dataset
    #[arg(long)]
    data: PathBuf,
    /// Evaluation dataset (defaults to --data)
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Summary CSV to write
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to start from (pretrains from scratch when omitted)
    #[arg(long)]
    init: Option<PathBuf>,
    /// Directory to keep intermediate checkpoints (discarded when omitted)
    #[arg(long)]
    ckpt_dir: Option<PathBuf>,
    #[arg(long)]
    pretrain_steps: Option<usize>,
    #[arg(long)]
    pretrain_lr: Option<f64>,
    /// Adapter-stage steps per configuration
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warm_steps: Option<usize>,
    #[arg(long)]
    cme_steps: Option<usize>,
    #[arg(long)]
    cme_lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

struct AblateBudget {
    seed: u64,
    batch: usize,
    pretrain_steps: usize,
    pretrain_lr: f64,
    steps: usize,
    lr: f64,
    warm_steps: usize,
    cme_steps: usize,
    cme_lr: f64,
}

/// Pretrained starting point: loaded from `--init` or trained on the spot.
fn obtain_base(
    a: &AblateArgs,
    budget: &AblateBudget,
    train_videos: &[SyntheticVideo],
) -> Result<(ParamStore, ArchConfig, String)> {
    if let Some(init) = &a.init {
        return checkpoint::load(init);
    }
    let model_cfg = ModelConfig::default();
    check_video_dims(train_videos, &model_cfg)?;
    let mut store = ParamStore::new();
    let mut rng = Rng::new(budget.seed);
    let model = Model::register(&mut store, model_cfg, &mut rng)?;
    let tcfg = TrainConfig {
        lr: budget.pretrain_lr,
        steps: budget.pretrain_steps,
        batch: budget.batch,
        seed: budget.seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = run_pretrain(&mut store, &model, train_videos, &tcfg)?;
    println!(
        "ablate: pretrained {} steps in {:.1}s, loss {:.4} -> {:.4}",
        tcfg.steps,
        start.elapsed().as_secs_f64(),
        report.initial_loss(),
        report.final_loss()
    );
    let arch = ArchConfig::from_model_config(&model.cfg);
    Ok((store, arch, String::from("pretrain")))
}

fn eval_row(
    config_name: &str,
    store: &ParamStore,
    model: &Model,
    eval_videos: &[SyntheticVideo],
    mode: CmeMode,
) -> Result<AblationRow> {
    let pipeline = Pipeline::new(model, pipeline_config(model, mode, None, None))?;
    let summary = evaluate(&pipeline, store, eval_videos)?;
    let post_j = post_appearance_mean_j(eval_videos, &summary)?;
    Ok(AblationRow {
        config: config_name.to_string(),
        mean_j: summary.mean_j,
        mean_f: summary.mean_f,
        mean_jf: summary.mean_jf,
        post_j: Some(post_j),
    })
}

fn save_row_checkpoint(
    dir: &Option<PathBuf>,
    name: &str,
    store: &ParamStore,
    arch: &ArchConfig,
    stage: &str,
) -> Result<()> {
    if let Some(dir) = dir {
        checkpoint::save(&dir.join(format!("{name}.ckpt.json")), store, arch, stage)?;
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs, file: &FileConfig) -> Result<()> {
    let budget = AblateBudget {
        seed: resolve_seed(a.seed, file.seed, DEFAULT_SEED)?,
        batch: resolve(a.batch, file.batch, DEFAULT_BATCH),
        pretrain_steps: a.pretrain_steps.unwrap_or(PRETRAIN_STEPS),
        pretrain_lr: a.pretrain_lr.unwrap_or(PRETRAIN_LR),
        steps: resolve(a.steps, file.steps, ADAPTER_STEPS),
        lr: resolve(a.lr, file.lr, ADAPTER_LR),
        warm_steps: resolve(a.warm_steps, file.warm_steps, ADAPTER_WARM),
        cme_steps: a.cme_steps.unwrap_or(DETECTOR_STEPS),
        cme_lr: a.cme_lr.unwrap_or(DETECTOR_LR),
    };
    let train_set = dataset::load_dataset(&a.data)?;
    let eval_videos = match &a.eval_data {
        Some(path) if path != &a.data => dataset::load_dataset(path)?.videos,
        _ => train_set.videos.clone(),
    };
    if let Some(dir) = &a.ckpt_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let rows = match a.suite.as_str() {
        "table2" => ablate_table2(&a, &budget, &train_set.videos, &eval_videos)?,
        "patch" => ablate_patch(&a, &budget, &train_set.videos, &eval_videos)?,
        "cme" => ablate_cme(&a, &budget, &train_set.videos, &eval_videos)?,
        other => bail!("--suite must be table2, patch or cme, got {other:?}"),
    };
    report::write_ablation_csv(&a.out, &a.suite, &rows)?;
    for row in &rows {
        let post = row.post_j.map(|v| format!(" post_j={v:.4}")).unwrap_or_default();
        println!(
            "ablate[{}] {}: mean_j={:.4} mean_f={:.4} mean_jf={:.4}{}",
            a.suite, row.config, row.mean_j, row.mean_f, row.mean_jf, post
        );
    }
    println!("ablate: wrote {}", a.out.display());
    Ok(())
}

/// Adapter-stage sweep: bottleneck MLPs only, + text/visual modulation,
/// + windowed spatio-temporal attention (the full stack).
fn ablate_table2(
    a: &AblateArgs,
    budget: &AblateBudget,
    train_videos: &[SyntheticVideo],
    eval_videos: &[SyntheticVideo],
) -> Result<Vec<AblationRow>> {
    let (base_store, arch, _) = obtain_base(a, budget, train_videos)?;
    let variants: [(&str, bool, bool, bool); 3] = [
        // (name, hsa, vta, tva)
        ("mlp-only", false, false, false),
        ("vta-tva", false, true, true),
        ("hsa-full", true, true, true),
    ];
    let mut rows = Vec::new();
    for (name, hsa, vta, tva) in variants {
        let mut store = base_store.clone();
        let mut cfg = arch.to_model_config();
        cfg.cmt.hsa = hsa;
        cfg.cmt.vta = vta;
        cfg.cmt.tva = tva;
        let model = Model::from_store(&store, cfg)?;
        let tcfg = TrainConfig {
            lr: budget.lr,
            steps: budget.steps,
            batch: budget.batch,
            warm_steps: budget.warm_steps,
            seed: budget.seed,
            ..TrainConfig::default()
        };
        let start = Instant::now();
        let report = run_adapters(&mut store, &model, train_videos, &tcfg)?;
        let train_s = start.elapsed().as_secs_f64();
        let row = eval_row(name, &store, &model, eval_videos, CmeMode::Off)?;
        println!(
            "ablate[table2] {name}: trained {} steps in {train_s:.1}s (loss {:.4} -> {:.4}), mean_jf={:.4}",
            tcfg.steps,
            report.initial_loss(),
            report.final_loss(),
            row.mean_jf
        );
        save_row_checkpoint(&a.ckpt_dir, &format!("table2-{name}"), &store, &ArchConfig::from_model_config(&model.cfg), "adapters")?;
        rows.push(row);
    }
    Ok(rows)
}

/// Sub-volume size sweep at the full adapter stack.
fn ablate_patch(
    a: &AblateArgs,
    budget: &AblateBudget,
    train_videos: &[SyntheticVideo],
    eval_videos: &[SyntheticVideo],
) -> Result<Vec<AblationRow>> {
    let (base_store, arch, _) = obtain_base(a, budget, train_videos)?;
    let variants: [(&str, Vec<usize>); 3] = [
        ("patch-2-2-2", vec![2, 2, 2]),
        ("patch-4-2-2", vec![4, 2, 2]),
        ("patch-8-4-4", vec![8, 4, 4]),
    ];
    let mut rows = Vec::new();
    for (name, patches) in variants {
        let mut store = base_store.clone();
        let mut cfg = arch.to_model_config();
        cfg.cmt.patch_sizes = patches;
        let model = Model::from_store(&store, cfg)?;
        let tcfg = TrainConfig {
            lr: budget.lr,
            steps: budget.steps,
            batch: budget.batch,
            warm_steps: budget.warm_steps,
            seed: budget.seed,
            ..TrainConfig::default()
        };
        let start = Instant::now();
        run_adapters(&mut store, &model, train_videos, &tcfg)?;
        let train_s = start.elapsed().as_secs_f64();
        let row = eval_row(name, &store, &model, eval_videos, CmeMode::Off)?;
        println!(
            "ablate[patch] {name}: trained {} steps in {train_s:.1}s, mean_jf={:.4}",
            tcfg.steps, row.mean_jf
        );
        save_row_checkpoint(&a.ckpt_dir, &format!("patch-{name}"), &store, &ArchConfig::from_model_config(&model.cfg), "adapters")?;
        rows.push(row);
    }
    Ok(rows)
}

/// Detection/fusion sweep: one model carried through the remaining stages,
/// evaluated with the detector off, gated, and forced on every frame.
fn ablate_cme(
    a: &AblateArgs,
    budget: &AblateBudget,
    train_videos: &[SyntheticVideo],
    eval_videos: &[SyntheticVideo],
) -> Result<Vec<AblationRow>> {
    let (mut store, arch, mut stage) = obtain_base(a, budget, train_videos)?;
    let model = Model::from_store(&store, arch.to_model_config())?;
    if stage == "pretrain" {
        let tcfg = TrainConfig {
            lr: budget.lr,
            steps: budget.steps,
            batch: budget.batch,
            warm_steps: budget.warm_steps,
            seed: budget.seed,
            ..TrainConfig::default()
        };
        let start = Instant::now();
        let report = run_adapters(&mut store, &model, train_videos, &tcfg)?;
        println!(
            "ablate[cme]: adapters {} steps in {:.1}s (loss {:.4} -> {:.4})",
            tcfg.steps,
            start.elapsed().as_secs_f64(),
            report.initial_loss(),
            report.final_loss()
        );
        stage = String::from("adapters");
    }
    if stage == "adapters" {
        let tcfg = TrainConfig {
            lr: budget.cme_lr,
            steps: budget.cme_steps,
            batch: budget.batch,
            seed: budget.seed,
            ..TrainConfig::default()
        };
        let start = Instant::now();
        let report = run_detector(&mut store, &model, train_videos, &tcfg)?;
        let probe = &train_videos[..train_videos.len().min(8)];
        let accuracy = detector_label_accuracy(&store, &model, probe)?;
        println!(
            "ablate[cme]: detector {} steps in {:.1}s (loss {:.4} -> {:.4}, label accuracy {:.3})",
            tcfg.steps,
            start.elapsed().as_secs_f64(),
            report.initial_loss(),
            report.final_loss(),
            accuracy
        );
    } else {
        model.cme.refresh_readout(&mut store)?;
    }
    save_row_checkpoint(&a.ckpt_dir, "cme-detector", &store, &arch, "detector")?;
    let mut rows = Vec::new();
    for (name, mode) in [
        ("cme-off", CmeMode::Off),
        ("cme-gated", CmeMode::Gated),
        ("cme-always", CmeMode::Always),
    ] {
        let start = Instant::now();
        let row = eval_row(name, &store, &model, eval_videos, mode)?;
        println!(
            "ablate[cme] {name}: eval in {:.1}s, mean_j={:.4} post_j={:.4}",
            start.elapsed().as_secs_f64(),
            row.mean_j,
            row.post_j.unwrap_or(f64::NAN)
        );
        rows.push(row);
    }
    Ok(rows)
}
