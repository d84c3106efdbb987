//! Streaming orchestration: frames arrive, clips of up to `T` frames are
//! encoded jointly with the caption (adapters injected), a prompt is built
//! once per clip, and each frame runs memory attention → mask decode →
//! optional candidate detection/fusion → memory encode, emitting one binary
//! mask per frame. State (the memory bank, the pinned caption, the frame
//! counter) lives in [`StreamState`] and is reset between videos.

use alloc::vec::Vec;

use crate::cme::{fuse, trigger};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::metrics::Mask;
use crate::model::Model;
use crate::params::ParamStore;
use crate::segmenter::{MemoryBank, MemoryEntry};
use crate::synth::Frame;
use crate::tensor::Tensor;

/// How the candidate detector participates in streaming.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmeMode {
    /// Skip all detector code paths (the plain tracking loop).
    Off,
    /// Run the detector and record probabilities, but never fuse
    /// (used while training the detector).
    Observe,
    /// Fuse the memory-less candidate into memory when p > 0.5 (strict).
    Gated,
    /// Force fusion at every frame regardless of the detector.
    Always,
}

/// Per-frame detector probability override, keyed by absolute frame index.
/// Returning `Some(p)` replaces the computed probability for that frame —
/// the hook used by scripted-scenario tests.
pub type DetectOverride = fn(usize) -> Option<f64>;

/// Streaming knobs, typically derived from [`crate::model::ModelConfig`].
#[derive(Clone)]
pub struct PipelineConfig {
    /// Clip length `T`.
    pub clip_len: usize,
    /// Fusion weight λ.
    pub lambda: f64,
    /// Detector participation.
    pub cme: CmeMode,
    /// When false, encoders run without adapter hooks (frozen baseline).
    pub use_adapters: bool,
    /// Optional scripted detector override.
    pub detect_override: Option<DetectOverride>,
}

impl PipelineConfig {
    /// Streaming defaults for a model: its `T` and λ, detector off,
    /// adapters on.
    pub fn for_model(model: &Model) -> PipelineConfig {
        PipelineConfig {
            clip_len: model.cfg.clip_len,
            lambda: model.cfg.lambda,
            cme: CmeMode::Off,
            use_adapters: true,
            detect_override: None,
        }
    }
}

/// Per-video mutable state.
pub struct StreamState {
    bank: MemoryBank,
    caption: Option<(Vec<u32>, Vec<bool>)>,
    frames_seen: usize,
    /// Total mask-decoder invocations so far (probe; fusion frames decode
    /// twice).
    pub decode_calls: usize,
}

impl StreamState {
    /// Frames processed so far.
    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Read access to the memory bank.
    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }
}

/// One frame's emitted results.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    /// Absolute frame index within the video.
    pub frame: usize,
    /// Emitted binary mask (`P_m > 0`, strict).
    pub mask: Mask,
    /// Tracked-path logits at input resolution.
    pub logits: Tensor,
    /// Detector probability when the detector ran.
    pub p_detect: Option<f64>,
    /// Whether the memory path received a fused map this frame.
    pub fused: bool,
}

/// Differentiable per-frame variables from one clip pass (the training
/// surface; inference wraps this and detaches).
pub struct FrameVars {
    /// Absolute frame index.
    pub frame: usize,
    /// Memory-less features `[h·w, c]`.
    pub f: Var,
    /// Memory-conditioned features.
    pub f_mem: Var,
    /// Mask-token state from the tracked decode.
    pub tau_m: Var,
    /// Tracked-path logits (input resolution).
    pub logits: Var,
    /// Memory-less readout token (detector modes only).
    pub tau_l: Option<Var>,
    /// Raw detection logit `[1,1]` (detector modes only).
    pub detect_logit: Option<Var>,
    /// Detection probability after any override.
    pub p_detect: Option<f64>,
    /// Whether fusion replaced this frame's memory input.
    pub fused: bool,
    /// The encoded memory entry pushed for this frame.
    pub mem_entry: Var,
}

/// All variables produced by one clip pass.
pub struct ClipVars {
    /// The prompt used at every frame of the clip.
    pub rho: Var,
    /// Per-frame variables, in temporal order.
    pub frames: Vec<FrameVars>,
    /// Mask-decoder invocations during this pass.
    pub decode_calls: usize,
}

/// Streaming driver borrowing a model and its weights.
pub struct Pipeline<'a> {
    pub model: &'a Model,
    pub cfg: PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(model: &'a Model, cfg: PipelineConfig) -> Result<Pipeline<'a>> {
        if cfg.clip_len == 0 {
            return Err(CoreError::InvalidArgument {
                op: "Pipeline",
                detail: alloc::string::String::from("clip_len must be positive"),
            });
        }
        if !(cfg.lambda > 0.0 && cfg.lambda <= 1.0) {
            return Err(CoreError::InvalidArgument {
                op: "Pipeline",
                detail: alloc::format!("lambda must lie in (0, 1], got {}", cfg.lambda),
            });
        }
        Ok(Pipeline { model, cfg })
    }

    /// Fresh per-video state.
    pub fn new_state(&self) -> StreamState {
        StreamState {
            bank: MemoryBank::new(self.model.cfg.bank_cap).expect("validated capacity"),
            caption: None,
            frames_seen: 0,
            decode_calls: 0,
        }
    }

    /// One differentiable pass over a clip: joint encoding with adapters,
    /// one prompt, then the per-frame loop against `bank_entries` (leaves
    /// or live variables, oldest first, paired with their frame indices).
    pub fn clip_vars(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frames: &[Frame],
        tokens: &[u32],
        verb_flags: &[bool],
        bank_entries: &[(Var, usize)],
        frame_offset: usize,
    ) -> Result<ClipVars> {
        if frames.is_empty() {
            return Err(CoreError::InvalidArgument {
                op: "clip_vars",
                detail: alloc::string::String::from("empty clip"),
            });
        }
        if frames.len() > self.cfg.clip_len {
            return Err(CoreError::InvalidArgument {
                op: "clip_vars",
                detail: alloc::format!(
                    "clip of {} frames exceeds T={}",
                    frames.len(),
                    self.cfg.clip_len
                ),
            });
        }
        let model = self.model;
        let t = frames.len();
        let clip = model.encoder.clip_tensor(frames)?;
        let hook = if self.cfg.use_adapters {
            Some(&model.cmt as &dyn crate::encoder::LevelHook)
        } else {
            None
        };
        let (pyramid, text) =
            model.encoder.encode_joint(g, store, &clip, t, tokens, verb_flags, hook)?;
        let rho = model.prompt.prompt(g, store, &text)?;
        let finest = *pyramid.finest();
        let frame_rows = finest.h * finest.w;

        let mut live: Vec<(Var, usize)> = bank_entries.to_vec();
        let mut out = Vec::with_capacity(t);
        let mut decode_calls = 0usize;
        for ft in 0..t {
            let frame_idx = frame_offset + ft;
            let f = g.rows_range(finest.var, ft * frame_rows, frame_rows)?;
            let entry_vars: Vec<Var> = live.iter().map(|(v, _)| *v).collect();
            let f_mem = model.sam.memory_attention(g, store, f, &entry_vars)?;
            let (tau_m, logits) = model.sam.mask_decode(g, store, f_mem, rho)?;
            decode_calls += 1;

            let mut tau_l = None;
            let mut detect_logit = None;
            let mut p_detect = None;
            let mut fused = false;
            let mut mem_input = logits;
            if self.cfg.cme != CmeMode::Off {
                let tl = model.cme.memoryless_token(g, store, &model.sam, f, rho)?;
                let (dl, mut p) = model.cme.detect(g, store, tau_m, tl)?;
                if let Some(hookfn) = self.cfg.detect_override {
                    if let Some(forced) = hookfn(frame_idx) {
                        p = forced;
                    }
                }
                tau_l = Some(tl);
                detect_logit = Some(dl);
                p_detect = Some(p);
                let fire = match self.cfg.cme {
                    CmeMode::Gated => trigger(p),
                    CmeMode::Always => true,
                    CmeMode::Off | CmeMode::Observe => false,
                };
                if fire {
                    let (_tau, cand) = model.sam.mask_decode(g, store, f, rho)?;
                    decode_calls += 1;
                    let fused_map =
                        fuse(g.val(logits), g.val(cand), self.cfg.lambda)?;
                    mem_input = g.leaf(fused_map)?;
                    fused = true;
                }
            }
            let mem_entry = model.sam.memory_encode(g, store, f, mem_input)?;
            live.push((mem_entry, frame_idx));
            while live.len() > model.cfg.bank_cap {
                live.remove(0);
            }
            out.push(FrameVars {
                frame: frame_idx,
                f,
                f_mem,
                tau_m,
                logits,
                tau_l,
                detect_logit,
                p_detect,
                fused,
                mem_entry,
            });
        }
        Ok(ClipVars { rho, frames: out, decode_calls })
    }

    /// Process one clip of a streaming video, updating `state` and emitting
    /// per-frame outputs. The caption is pinned by the first clip.
    pub fn process_clip(
        &self,
        store: &ParamStore,
        state: &mut StreamState,
        frames: &[Frame],
        tokens: &[u32],
        verb_flags: &[bool],
    ) -> Result<Vec<FrameOutput>> {
        match &state.caption {
            None => state.caption = Some((tokens.to_vec(), verb_flags.to_vec())),
            Some((tk, vf)) => {
                if tk.as_slice() != tokens || vf.as_slice() != verb_flags {
                    return Err(CoreError::InvalidArgument {
                        op: "process_clip",
                        detail: alloc::string::String::from("caption changed mid-video"),
                    });
                }
            }
        }
        let mut g = Graph::new();
        let mut bank_entries = Vec::with_capacity(state.bank.len());
        for e in state.bank.iter() {
            bank_entries.push((g.leaf(e.map.clone())?, e.frame));
        }
        let clip =
            self.clip_vars(&mut g, store, frames, tokens, verb_flags, &bank_entries, state.frames_seen)?;
        state.decode_calls += clip.decode_calls;

        // Rebuild the bank from the surviving live entries: the within-clip
        // FIFO law already trimmed to capacity inside clip_vars, so replay
        // the same trim here on (value, frame) pairs.
        let mut surviving: Vec<(Tensor, usize)> = bank_entries
            .iter()
            .map(|(v, fi)| (g.val(*v).clone(), *fi))
            .collect();
        for fv in &clip.frames {
            surviving.push((g.val(fv.mem_entry).clone(), fv.frame));
            while surviving.len() > self.model.cfg.bank_cap {
                surviving.remove(0);
            }
        }
        state.bank.clear();
        for (map, frame) in surviving {
            state.bank.push(MemoryEntry { map, frame })?;
        }
        state.frames_seen += frames.len();

        let mut outputs = Vec::with_capacity(clip.frames.len());
        for fv in clip.frames {
            let logits = g.val(fv.logits).clone();
            let mask = Mask::from_logits(&logits)?;
            outputs.push(FrameOutput {
                frame: fv.frame,
                mask,
                logits,
                p_detect: fv.p_detect,
                fused: fv.fused,
            });
        }
        Ok(outputs)
    }

    /// Stream a whole video: buffer clips of `T` frames (final clip may be
    /// shorter), run each in arrival order, return all per-frame outputs.
    pub fn run_video(
        &self,
        store: &ParamStore,
        frames: &[Frame],
        tokens: &[u32],
        verb_flags: &[bool],
    ) -> Result<Vec<FrameOutput>> {
        if frames.is_empty() {
            return Err(CoreError::InvalidArgument {
                op: "run_video",
                detail: alloc::string::String::from("empty video"),
            });
        }
        let mut state = self.new_state();
        let mut all = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(self.cfg.clip_len) {
            all.extend(self.process_clip(store, &mut state, chunk, tokens, verb_flags)?);
        }
        Ok(all)
    }
}
