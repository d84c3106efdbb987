//! Evaluation: run the streaming pipeline over videos and score every frame
//! with region overlap J and boundary accuracy F. Frames where the target
//! is absent score 1 when the prediction is also empty, 0 otherwise (the
//! metric functions encode that rule).

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::metrics::{contour_f, region_j, Mask, CONTOUR_TOL};
use crate::params::ParamStore;
use crate::pipeline::{FrameOutput, Pipeline};
use crate::synth::SyntheticVideo;

/// One frame's metric pair.
#[derive(Debug, Clone, Copy)]
pub struct FrameScore {
    pub frame: usize,
    pub j: f64,
    pub f: f64,
    /// Detector probability at this frame, when the detector ran.
    pub p_detect: Option<f64>,
    /// Whether fusion fired at this frame.
    pub fused: bool,
}

/// Per-video aggregate.
#[derive(Debug, Clone)]
pub struct VideoScore {
    /// Position in the evaluated list.
    pub index: usize,
    /// Generator seed of the video (stable identifier).
    pub seed: u64,
    pub frames: Vec<FrameScore>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
}

/// Whole-suite aggregate: means over all frames of all videos.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub videos: Vec<VideoScore>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    pub frames_scored: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (if n == 0 { f64::NAN } else { sum / n as f64 }, n)
}

/// Score one video's outputs against its ground-truth masks.
pub fn score_video(
    index: usize,
    seed: u64,
    outputs: &[FrameOutput],
    truth: &[Mask],
) -> Result<VideoScore> {
    if outputs.len() != truth.len() || outputs.is_empty() {
        return Err(CoreError::InvalidArgument {
            op: "score_video",
            detail: alloc::format!("{} outputs vs {} ground-truth frames", outputs.len(), truth.len()),
        });
    }
    let mut frames = Vec::with_capacity(outputs.len());
    for (out, gt) in outputs.iter().zip(truth) {
        frames.push(FrameScore {
            frame: out.frame,
            j: region_j(&out.mask, gt)?,
            f: contour_f(&out.mask, gt, CONTOUR_TOL)?,
            p_detect: out.p_detect,
            fused: out.fused,
        });
    }
    let (mean_j, _) = mean(frames.iter().map(|s| s.j));
    let (mean_f, _) = mean(frames.iter().map(|s| s.f));
    Ok(VideoScore { index, seed, frames, mean_j, mean_f, mean_jf: 0.5 * (mean_j + mean_f) })
}

/// Stream and score a whole suite. Aggregates are frame-weighted (every
/// annotated frame counts once).
pub fn evaluate(
    pipeline: &Pipeline,
    store: &ParamStore,
    videos: &[SyntheticVideo],
) -> Result<EvalSummary> {
    if videos.is_empty() {
        return Err(CoreError::InvalidArgument {
            op: "evaluate",
            detail: String::from("empty evaluation set"),
        });
    }
    let mut scored = Vec::with_capacity(videos.len());
    for (i, video) in videos.iter().enumerate() {
        let outputs = pipeline.run_video(store, &video.frames, &video.tokens, &video.verb_flags)?;
        scored.push(score_video(i, video.seed, &outputs, &video.target_masks)?);
    }
    let (mean_j, frames_scored) =
        mean(scored.iter().flat_map(|v| v.frames.iter().map(|s| s.j)));
    let (mean_f, _) = mean(scored.iter().flat_map(|v| v.frames.iter().map(|s| s.f)));
    Ok(EvalSummary {
        videos: scored,
        mean_j,
        mean_f,
        mean_jf: 0.5 * (mean_j + mean_f),
        frames_scored,
    })
}

/// Mean J restricted to frames at or after each video's target appearance —
/// the quantity the candidate detector is meant to improve.
pub fn post_appearance_mean_j(videos: &[SyntheticVideo], summary: &EvalSummary) -> Result<f64> {
    if videos.len() != summary.videos.len() {
        return Err(CoreError::InvalidArgument {
            op: "post_appearance_mean_j",
            detail: alloc::format!(
                "{} videos vs {} scored",
                videos.len(),
                summary.videos.len()
            ),
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (video, score) in videos.iter().zip(&summary.videos) {
        let appear = video.target.appear_at();
        for fs in &score.frames {
            if fs.frame >= appear {
                sum += fs.j;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(CoreError::InvalidArgument {
            op: "post_appearance_mean_j",
            detail: String::from("no post-appearance frames"),
        });
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use crate::pipeline::PipelineConfig;
    use crate::rng::Rng;
    use crate::synth::{generate, Scenario, SynthConfig};
    use crate::tensor::Tensor;

    fn perfect_output(frame: usize, gt: &Mask) -> FrameOutput {
        let mut logits = Tensor::zeros(&[gt.h(), gt.w()]);
        for i in 0..gt.h() {
            for j in 0..gt.w() {
                logits.set2(i, j, if gt.get(i, j) { 5.0 } else { -5.0 });
            }
        }
        FrameOutput { frame, mask: gt.clone(), logits, p_detect: None, fused: false }
    }

    #[test]
    fn perfect_predictions_score_ones() {
        let mut gt = Mask::empty(8, 8);
        for i in 2..5 {
            for j in 3..6 {
                gt.set(i, j, true);
            }
        }
        let outs: Vec<FrameOutput> = (0..3).map(|t| perfect_output(t, &gt)).collect();
        let truth = alloc::vec![gt.clone(), gt.clone(), gt.clone()];
        let vs = score_video(0, 9, &outs, &truth).unwrap();
        assert_eq!(vs.mean_j, 1.0);
        assert_eq!(vs.mean_f, 1.0);
        assert_eq!(vs.mean_jf, 1.0);
    }

    #[test]
    fn mixed_scores_average_per_frame() {
        let mut gt = Mask::empty(8, 8);
        gt.set(1, 1, true);
        let hit = perfect_output(0, &gt);
        // A miss: empty prediction against a nonempty target.
        let miss = FrameOutput {
            frame: 1,
            mask: Mask::empty(8, 8),
            logits: Tensor::full(&[8, 8], -5.0),
            p_detect: None,
            fused: false,
        };
        let vs = score_video(0, 9, &[hit, miss], &[gt.clone(), gt]).unwrap();
        assert_eq!(vs.mean_j, 0.5);
        assert_eq!(vs.mean_f, 0.5);
        assert_eq!(vs.mean_jf, 0.5);
    }

    #[test]
    fn absent_target_scoring_rule() {
        let empty = Mask::empty(8, 8);
        let pred_empty = FrameOutput {
            frame: 0,
            mask: Mask::empty(8, 8),
            logits: Tensor::full(&[8, 8], -5.0),
            p_detect: None,
            fused: false,
        };
        let vs = score_video(0, 9, &[pred_empty], &[empty.clone()]).unwrap();
        assert_eq!(vs.mean_j, 1.0, "empty prediction on an absent target is correct");

        let mut wrong = Mask::empty(8, 8);
        wrong.set(0, 0, true);
        let pred_wrong = FrameOutput {
            frame: 0,
            mask: wrong.clone(),
            logits: Tensor::zeros(&[8, 8]),
            p_detect: None,
            fused: false,
        };
        let vs = score_video(0, 9, &[pred_wrong], &[empty]).unwrap();
        assert_eq!(vs.mean_j, 0.0, "any prediction on an absent target is wrong");
    }

    #[test]
    fn end_to_end_evaluation_over_pipeline() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(81);
        let model = Model::register(&mut store, ModelConfig::default(), &mut rng).unwrap();
        let pl = Pipeline::new(&model, PipelineConfig::for_model(&model)).unwrap();
        let cfg = SynthConfig { t_v: 5, ..SynthConfig::default() };
        let videos: Vec<_> =
            (0..2).map(|i| generate(900 + i, Scenario::StaticTarget, &cfg).unwrap()).collect();
        let summary = evaluate(&pl, &store, &videos).unwrap();
        assert_eq!(summary.videos.len(), 2);
        assert_eq!(summary.frames_scored, 10);
        assert!((0.0..=1.0).contains(&summary.mean_j));
        assert!((0.0..=1.0).contains(&summary.mean_f));
        assert!((summary.mean_jf - 0.5 * (summary.mean_j + summary.mean_f)).abs() < 1e-15);
    }

    #[test]
    fn post_appearance_restriction() {
        let cfg = SynthConfig { t_v: 8, n_distractors: 1, ..SynthConfig::default() };
        let video = generate(77, Scenario::LateAppearing, &cfg).unwrap();
        let appear = video.target.appear_at();
        assert!(appear > 0, "late-appearing target must not start visible");

        // Hand-build a summary scoring 1.0 before appearance, 0.25 after.
        let mut frames = Vec::new();
        for t in 0..8 {
            frames.push(FrameScore {
                frame: t,
                j: if t >= appear { 0.25 } else { 1.0 },
                f: 0.0,
                p_detect: None,
                fused: false,
            });
        }
        let vs = VideoScore { index: 0, seed: 77, frames, mean_j: 0.0, mean_f: 0.0, mean_jf: 0.0 };
        let summary = EvalSummary {
            videos: alloc::vec![vs],
            mean_j: 0.0,
            mean_f: 0.0,
            mean_jf: 0.0,
            frames_scored: 8,
        };
        let pj = post_appearance_mean_j(&[video], &summary).unwrap();
        assert!((pj - 0.25).abs() < 1e-15);
    }
}
