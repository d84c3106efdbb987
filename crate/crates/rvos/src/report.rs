//! Result files: training curves and evaluation metrics as CSV, inference
//! outputs as mask images plus a JSON trace.

use std::path::Path;

use anyhow::{Context, Result};
use rvos_core::eval::EvalSummary;
use rvos_core::pipeline::FrameOutput;
use rvos_core::train::StageReport;
use serde::Serialize;

use crate::dataset::encode_pgm;

/// One `stage,step,loss,dice,focal` row per optimizer step.
pub fn write_train_csv(path: &Path, reports: &[StageReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["stage", "step", "loss", "dice", "focal"])?;
    for report in reports {
        for rec in &report.records {
            w.write_record([
                report.stage.tag().to_string(),
                rec.step.to_string(),
                format!("{:.6}", rec.loss),
                format!("{:.6}", rec.dice),
                format!("{:.6}", rec.focal),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-video J/F rows plus a frame-weighted aggregate line.
pub fn write_eval_csv(path: &Path, summary: &EvalSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["video", "seed", "frames", "mean_j", "mean_f", "mean_jf"])?;
    for v in &summary.videos {
        w.write_record([
            v.index.to_string(),
            v.seed.to_string(),
            v.frames.len().to_string(),
            format!("{:.6}", v.mean_j),
            format!("{:.6}", v.mean_f),
            format!("{:.6}", v.mean_jf),
        ])?;
    }
    w.write_record([
        "all".to_string(),
        String::new(),
        summary.frames_scored.to_string(),
        format!("{:.6}", summary.mean_j),
        format!("{:.6}", summary.mean_f),
        format!("{:.6}", summary.mean_jf),
    ])?;
    w.flush()?;
    Ok(())
}

/// One ablation-suite row: a named configuration and its scores.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub config: String,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    /// Mean J restricted to post-appearance frames (detector suite only).
    pub post_j: Option<f64>,
}

pub fn write_ablation_csv(path: &Path, suite: &str, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["suite", "config", "mean_j", "mean_f", "mean_jf", "post_appearance_j"])?;
    for row in rows {
        w.write_record([
            suite.to_string(),
            row.config.clone(),
            format!("{:.6}", row.mean_j),
            format!("{:.6}", row.mean_f),
            format!("{:.6}", row.mean_jf),
            row.post_j.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FrameTrace {
    frame: usize,
    mask_file: String,
    foreground_pixels: usize,
    p_detect: Option<f64>,
    fused: bool,
}

#[derive(Serialize)]
struct InferResult<'a> {
    caption: &'a str,
    frames: usize,
    height: usize,
    width: usize,
    frames_with_target: usize,
    fusions: usize,
    trace: Vec<FrameTrace>,
}

/// Write per-frame masks (`masks/mask_XXX.pgm`) and `result.json` under `out`.
pub fn write_infer_outputs(out: &Path, caption: &str, outputs: &[FrameOutput]) -> Result<()> {
    let masks_dir = out.join("masks");
    std::fs::create_dir_all(&masks_dir)
        .with_context(|| format!("creating {}", masks_dir.display()))?;
    let mut trace = Vec::with_capacity(outputs.len());
    for o in outputs {
        let name = format!("mask_{:03}.pgm", o.frame);
        std::fs::write(masks_dir.join(&name), encode_pgm(&o.mask))?;
        trace.push(FrameTrace {
            frame: o.frame,
            mask_file: format!("masks/{name}"),
            foreground_pixels: o.mask.count(),
            p_detect: o.p_detect,
            fused: o.fused,
        });
    }
    let (h, w) = outputs
        .first()
        .map(|o| (o.mask.h(), o.mask.w()))
        .unwrap_or((0, 0));
    let result = InferResult {
        caption,
        frames: outputs.len(),
        height: h,
        width: w,
        frames_with_target: outputs.iter().filter(|o| !o.mask.is_blank()).count(),
        fusions: outputs.iter().filter(|o| o.fused).count(),
        trace,
    };
    std::fs::write(out.join("result.json"), serde_json::to_string_pretty(&result)?)?;
    Ok(())
}
