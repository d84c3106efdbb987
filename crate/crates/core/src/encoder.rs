//! Frozen perception stack: a hierarchical per-frame visual encoder and a
//! small text encoder, both exposing per-level hook points where adapters
//! attach.
//!
//! The visual encoder halves the spatial resolution at every level with a
//! stride-2 patch-merging block (linear on 2×2 neighbourhoods + gelu + layer
//! norm) followed by a stack of residual MLP blocks, all applied per frame.
//! The text encoder is an embedding table plus additive 1-D positional
//! encoding followed by pre-norm self-attention blocks, one per visual level
//! so that a joint hook can transform `(F^k, E^k)` between levels.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::pe::pe1d_seq;
use crate::rng::Rng;
use crate::synth::Frame;
use crate::tensor::Tensor;

/// Shape configuration for the two encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Input frame height (level 0 consumes this).
    pub input_h: usize,
    /// Input frame width.
    pub input_w: usize,
    /// Input channels (RGB = 3).
    pub input_c: usize,
    /// Output channels per pyramid level; the number of levels is implied.
    pub level_channels: Vec<usize>,
    /// Residual MLP blocks per level after the patch merge.
    pub level_depths: Vec<usize>,
    /// Text width `C_t`.
    pub c_t: usize,
    /// Vocabulary size for the embedding table.
    pub vocab: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_h: 32,
            input_w: 32,
            input_c: 3,
            level_channels: alloc::vec![16, 32, 64],
            level_depths: alloc::vec![2, 3, 6],
            c_t: 32,
            vocab: crate::synth::Lexicon::standard().len(),
        }
    }
}

impl EncoderConfig {
    /// Number of pyramid levels (= text depth = hook count).
    pub fn n_levels(&self) -> usize {
        self.level_channels.len()
    }

    /// Spatial height of level `k` (0-based): strict halving per level.
    pub fn level_h(&self, k: usize) -> usize {
        self.input_h >> (k + 1)
    }

    /// Spatial width of level `k` (0-based).
    pub fn level_w(&self, k: usize) -> usize {
        self.input_w >> (k + 1)
    }

    /// Channels at level `k`.
    pub fn level_c(&self, k: usize) -> usize {
        self.level_channels[k]
    }

    /// Check the halving and positivity invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_levels();
        if n == 0 || self.level_depths.len() != n {
            return Err(CoreError::InvalidArgument {
                op: "EncoderConfig",
                detail: format!(
                    "need matching non-empty level lists, got {} channels / {} depths",
                    n,
                    self.level_depths.len()
                ),
            });
        }
        if self.input_h % (1 << n) != 0 || self.input_w % (1 << n) != 0 {
            return Err(CoreError::InvalidArgument {
                op: "EncoderConfig",
                detail: format!(
                    "input {}x{} not divisible by 2^{} for strict halving",
                    self.input_h, self.input_w, n
                ),
            });
        }
        if self.input_c == 0 || self.c_t == 0 || self.vocab == 0 {
            return Err(CoreError::InvalidArgument {
                op: "EncoderConfig",
                detail: String::from("all sizes must be positive"),
            });
        }
        Ok(())
    }
}

/// One pyramid level's features for the current clip, stored as a rank-2
/// tensor of per-pixel rows in `(t, i, j)`-major order: `[T·H·W, C]`.
#[derive(Debug, Clone, Copy)]
pub struct LevelFeatures {
    /// Feature rows, `[t*h*w, c]`.
    pub var: Var,
    /// Clip length.
    pub t: usize,
    /// Level height.
    pub h: usize,
    /// Level width.
    pub w: usize,
    /// Level channels.
    pub c: usize,
}

impl LevelFeatures {
    /// Row index of pixel `(i, j)` in frame `t`.
    pub fn row(&self, t: usize, i: usize, j: usize) -> usize {
        (t * self.h + i) * self.w + j
    }

    /// Rows of a single frame as a slice of the flat layout.
    pub fn frame_rows(&self) -> usize {
        self.h * self.w
    }
}

/// Per-level visual features for one clip.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    /// One entry per level, finest (largest map) first.
    pub levels: Vec<LevelFeatures>,
}

impl FeaturePyramid {
    /// The finest level (largest spatial map), consumed by the segmenter.
    pub fn finest(&self) -> &LevelFeatures {
        &self.levels[0]
    }
}

/// Per-layer text features with verb flags; `[CLS]` sits at row 0.
#[derive(Debug, Clone)]
pub struct TextFeatures {
    /// State after each text block (and hook): one `[L+1, C_t]` var per level.
    pub layers: Vec<Var>,
    /// Per-row verb flags, aligned with token rows.
    pub verb_flags: Vec<bool>,
}

impl TextFeatures {
    /// Final-layer representation.
    pub fn last(&self) -> Var {
        *self.layers.last().expect("text encoder has at least one block")
    }
}

/// A per-level transform applied jointly to `(F^k, E^k)` after level `k` is
/// computed and before level `k+1` consumes either stream.
pub trait LevelHook {
    /// Transform the level's visual features and the running text state.
    fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        level: usize,
        f: LevelFeatures,
        e: Var,
    ) -> Result<(LevelFeatures, Var)>;
}

struct MlpBlockIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct VisualLevelIds {
    merge_w: ParamId,
    merge_b: ParamId,
    blocks: Vec<MlpBlockIds>,
}

struct TextBlockIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Handle to the encoder parameters inside a [`ParamStore`].
pub struct Encoder {
    /// Shape configuration the parameters were built for.
    pub cfg: EncoderConfig,
    levels: Vec<VisualLevelIds>,
    embed: ParamId,
    text_blocks: Vec<TextBlockIds>,
}

fn register_linear(
    store: &mut ParamStore,
    rng: &mut Rng,
    name_w: &str,
    name_b: &str,
    fan_in: usize,
    fan_out: usize,
    trainable: bool,
) -> Result<(ParamId, ParamId)> {
    let std = 1.0 / libm::sqrt(fan_in as f64);
    let w = store.register(name_w, Tensor::randn(&[fan_in, fan_out], std, rng), trainable)?;
    let b = store.register(name_b, Tensor::zeros(&[1, fan_out]), trainable)?;
    Ok((w, b))
}

impl Encoder {
    /// Create and register fresh encoder parameters. Visual weights start
    /// trainable (they are learned in the promptable-pretraining stage and
    /// frozen afterwards); text weights are frozen at seeded random
    /// initialization from the start.
    pub fn register(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut Rng) -> Result<Encoder> {
        cfg.validate()?;
        let mut levels = Vec::new();
        let mut c_in = cfg.input_c;
        for (k, &c_out) in cfg.level_channels.iter().enumerate() {
            let (merge_w, merge_b) = register_linear(
                store,
                rng,
                &format!("encoder.visual.level{k}.merge.w"),
                &format!("encoder.visual.level{k}.merge.b"),
                4 * c_in,
                c_out,
                true,
            )?;
            let mut blocks = Vec::new();
            for i in 0..cfg.level_depths[k] {
                let hidden = 4 * c_out;
                let (w1, b1) = register_linear(
                    store,
                    rng,
                    &format!("encoder.visual.level{k}.block{i}.w1"),
                    &format!("encoder.visual.level{k}.block{i}.b1"),
                    c_out,
                    hidden,
                    true,
                )?;
                let (w2, b2) = register_linear(
                    store,
                    rng,
                    &format!("encoder.visual.level{k}.block{i}.w2"),
                    &format!("encoder.visual.level{k}.block{i}.b2"),
                    hidden,
                    c_out,
                    true,
                )?;
                blocks.push(MlpBlockIds { w1, b1, w2, b2 });
            }
            levels.push(VisualLevelIds { merge_w, merge_b, blocks });
            c_in = c_out;
        }

        let embed = store.register(
            "encoder.text.embed",
            Tensor::randn(&[cfg.vocab, cfg.c_t], 1.0, rng),
            false,
        )?;
        let mut text_blocks = Vec::new();
        for k in 0..cfg.n_levels() {
            let p = |s: &str| format!("encoder.text.block{k}.{s}");
            let (wq, bq) = register_linear(store, rng, &p("wq"), &p("bq"), cfg.c_t, cfg.c_t, false)?;
            let (wk, bk) = register_linear(store, rng, &p("wk"), &p("bk"), cfg.c_t, cfg.c_t, false)?;
            let (wv, bv) = register_linear(store, rng, &p("wv"), &p("bv"), cfg.c_t, cfg.c_t, false)?;
            let (wo, bo) = register_linear(store, rng, &p("wo"), &p("bo"), cfg.c_t, cfg.c_t, false)?;
            let hidden = 4 * cfg.c_t;
            let (w1, b1) = register_linear(store, rng, &p("w1"), &p("b1"), cfg.c_t, hidden, false)?;
            let (w2, b2) = register_linear(store, rng, &p("w2"), &p("b2"), hidden, cfg.c_t, false)?;
            text_blocks.push(TextBlockIds { wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2 });
        }
        Ok(Encoder { cfg: cfg.clone(), levels, embed, text_blocks })
    }

    /// Re-attach to parameters already present in a store (checkpoint load).
    pub fn from_store(store: &ParamStore, cfg: &EncoderConfig) -> Result<Encoder> {
        cfg.validate()?;
        let mut levels = Vec::new();
        for k in 0..cfg.n_levels() {
            let merge_w = store.id(&format!("encoder.visual.level{k}.merge.w"))?;
            let merge_b = store.id(&format!("encoder.visual.level{k}.merge.b"))?;
            let mut blocks = Vec::new();
            for i in 0..cfg.level_depths[k] {
                blocks.push(MlpBlockIds {
                    w1: store.id(&format!("encoder.visual.level{k}.block{i}.w1"))?,
                    b1: store.id(&format!("encoder.visual.level{k}.block{i}.b1"))?,
                    w2: store.id(&format!("encoder.visual.level{k}.block{i}.w2"))?,
                    b2: store.id(&format!("encoder.visual.level{k}.block{i}.b2"))?,
                });
            }
            levels.push(VisualLevelIds { merge_w, merge_b, blocks });
        }
        let embed = store.id("encoder.text.embed")?;
        let mut text_blocks = Vec::new();
        for k in 0..cfg.n_levels() {
            let p = |s: &str| format!("encoder.text.block{k}.{s}");
            text_blocks.push(TextBlockIds {
                wq: store.id(&p("wq"))?,
                bq: store.id(&p("bq"))?,
                wk: store.id(&p("wk"))?,
                bk: store.id(&p("bk"))?,
                wv: store.id(&p("wv"))?,
                bv: store.id(&p("bv"))?,
                wo: store.id(&p("wo"))?,
                bo: store.id(&p("bo"))?,
                w1: store.id(&p("w1"))?,
                b1: store.id(&p("b1"))?,
                w2: store.id(&p("w2"))?,
                b2: store.id(&p("b2"))?,
            });
        }
        Ok(Encoder { cfg: cfg.clone(), levels, embed, text_blocks })
    }

    /// Pack clip frames into the level-0 input tensor `[T·H·W, C_in]`.
    pub fn clip_tensor(&self, frames: &[Frame]) -> Result<Tensor> {
        if frames.is_empty() {
            return Err(CoreError::InvalidArgument {
                op: "clip_tensor",
                detail: String::from("empty clip"),
            });
        }
        let (h, w) = (self.cfg.input_h, self.cfg.input_w);
        let mut data = Vec::with_capacity(frames.len() * h * w * self.cfg.input_c);
        for f in frames {
            if f.h != h || f.w != w {
                return Err(CoreError::ShapeMismatch {
                    op: "clip_tensor",
                    detail: format!("frame {}x{} vs configured {}x{}", f.h, f.w, h, w),
                });
            }
            data.extend_from_slice(&f.to_unit_rows());
        }
        Tensor::new(&[frames.len() * h * w, self.cfg.input_c], data)
    }

    fn residual_mlp(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        blk: &MlpBlockIds,
        x: Var,
    ) -> Result<Var> {
        let n = g.layer_norm(x)?;
        let w1 = g.param(store, blk.w1)?;
        let b1 = g.param(store, blk.b1)?;
        let mut y = g.linear(n, w1, Some(b1))?;
        y = g.gelu(y)?;
        let w2 = g.param(store, blk.w2)?;
        let b2 = g.param(store, blk.b2)?;
        y = g.linear(y, w2, Some(b2))?;
        g.add(x, y)
    }

    /// Compute one pyramid level from its input stream.
    fn visual_level(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        k: usize,
        x: Var,
        t: usize,
        h: usize,
        w: usize,
        c: usize,
    ) -> Result<LevelFeatures> {
        let level = &self.levels[k];
        let (ho, wo) = (h / 2, w / 2);
        let idx = merge_indices(t, h, w, c);
        let n = g.gather(x, idx, &[t * ho * wo, 4 * c])?;
        let wvar = g.param(store, level.merge_w)?;
        let bvar = g.param(store, level.merge_b)?;
        let mut y = g.linear(n, wvar, Some(bvar))?;
        y = g.gelu(y)?;
        y = g.layer_norm(y)?;
        for blk in &level.blocks {
            y = self.residual_mlp(g, store, blk, y)?;
        }
        Ok(LevelFeatures { var: y, t, h: ho, w: wo, c: self.cfg.level_c(k) })
    }

    fn text_block(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        blk: &TextBlockIds,
        e: Var,
    ) -> Result<Var> {
        let n = g.layer_norm(e)?;
        let wq = g.param(store, blk.wq)?;
        let bq = g.param(store, blk.bq)?;
        let q = g.linear(n, wq, Some(bq))?;
        let wk = g.param(store, blk.wk)?;
        let bk = g.param(store, blk.bk)?;
        let kk = g.linear(n, wk, Some(bk))?;
        let wv = g.param(store, blk.wv)?;
        let bv = g.param(store, blk.bv)?;
        let v = g.linear(n, wv, Some(bv))?;
        let a = g.attention(q, kk, v)?;
        let wo = g.param(store, blk.wo)?;
        let bo = g.param(store, blk.bo)?;
        let o = g.linear(a, wo, Some(bo))?;
        let e = g.add(e, o)?;
        let n2 = g.layer_norm(e)?;
        let w1 = g.param(store, blk.w1)?;
        let b1 = g.param(store, blk.b1)?;
        let mut m = g.linear(n2, w1, Some(b1))?;
        m = g.gelu(m)?;
        let w2 = g.param(store, blk.w2)?;
        let b2 = g.param(store, blk.b2)?;
        m = g.linear(m, w2, Some(b2))?;
        g.add(e, m)
    }

    /// Embed tokens and add the 1-D positional code: the text block input.
    fn text_input(&self, g: &mut Graph, store: &ParamStore, tokens: &[u32]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(CoreError::InvalidArgument {
                op: "encode_text",
                detail: String::from("empty token sequence"),
            });
        }
        let c_t = self.cfg.c_t;
        let mut idx = Vec::with_capacity(tokens.len() * c_t);
        for &tok in tokens {
            if tok as usize >= self.cfg.vocab {
                return Err(CoreError::InvalidArgument {
                    op: "encode_text",
                    detail: format!("token id {tok} outside vocabulary of {}", self.cfg.vocab),
                });
            }
            for c in 0..c_t {
                idx.push(tok as usize * c_t + c);
            }
        }
        let table = g.param(store, self.embed)?;
        let emb = g.gather(table, idx, &[tokens.len(), c_t])?;
        let pe = g.leaf(pe1d_seq(tokens.len(), c_t)?)?;
        g.add(emb, pe)
    }

    /// Encode a clip without hooks: per-frame hierarchical features.
    pub fn encode_frames(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        clip: &Tensor,
        t: usize,
    ) -> Result<FeaturePyramid> {
        let (py, _) = self.encode_with(g, store, clip, t, None, None)?;
        Ok(py)
    }

    /// Encode tokens without hooks.
    pub fn encode_text(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[u32],
        verb_flags: &[bool],
    ) -> Result<TextFeatures> {
        if verb_flags.len() != tokens.len() {
            return Err(CoreError::ShapeMismatch {
                op: "encode_text",
                detail: format!("{} tokens vs {} verb flags", tokens.len(), verb_flags.len()),
            });
        }
        let mut e = self.text_input(g, store, tokens)?;
        let mut layers = Vec::new();
        for blk in &self.text_blocks {
            e = self.text_block(g, store, blk, e)?;
            layers.push(e);
        }
        Ok(TextFeatures { layers, verb_flags: verb_flags.to_vec() })
    }

    /// Encode a clip and its caption jointly, applying an optional per-level
    /// hook to `(F^k, E^k)` after each level before the next consumes either.
    pub fn encode_joint(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        clip: &Tensor,
        t: usize,
        tokens: &[u32],
        verb_flags: &[bool],
        hook: Option<&dyn LevelHook>,
    ) -> Result<(FeaturePyramid, TextFeatures)> {
        if verb_flags.len() != tokens.len() {
            return Err(CoreError::ShapeMismatch {
                op: "encode_joint",
                detail: format!("{} tokens vs {} verb flags", tokens.len(), verb_flags.len()),
            });
        }
        let (py, layers) = self.encode_with(g, store, clip, t, Some(tokens), hook)?;
        Ok((py, TextFeatures { layers, verb_flags: verb_flags.to_vec() }))
    }

    fn encode_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        clip: &Tensor,
        t: usize,
        tokens: Option<&[u32]>,
        hook: Option<&dyn LevelHook>,
    ) -> Result<(FeaturePyramid, Vec<Var>)> {
        let (h0, w0, c0) = (self.cfg.input_h, self.cfg.input_w, self.cfg.input_c);
        if t == 0 || clip.rows() != t * h0 * w0 || clip.cols() != c0 {
            return Err(CoreError::ShapeMismatch {
                op: "encode_frames",
                detail: format!(
                    "clip [{}, {}] does not match T={} frames of {}x{}x{}",
                    clip.rows(),
                    clip.cols(),
                    t,
                    h0,
                    w0,
                    c0
                ),
            });
        }
        if hook.is_some() && tokens.is_none() {
            return Err(CoreError::InvalidArgument {
                op: "encode_joint",
                detail: String::from("hooks transform (F, E) jointly and need a caption"),
            });
        }
        let mut x = g.leaf(clip.clone())?;
        let mut e = match tokens {
            Some(toks) => Some(self.text_input(g, store, toks)?),
            None => None,
        };
        let (mut h, mut w, mut c) = (h0, w0, c0);
        let mut levels = Vec::new();
        let mut layers = Vec::new();
        for k in 0..self.cfg.n_levels() {
            let mut lvl = self.visual_level(g, store, k, x, t, h, w, c)?;
            if let Some(ev) = e {
                let mut ek = self.text_block(g, store, &self.text_blocks[k], ev)?;
                if let Some(hk) = hook {
                    let (lf, et) = hk.apply(g, store, k, lvl, ek)?;
                    lvl = lf;
                    ek = et;
                }
                layers.push(ek);
                e = Some(ek);
            }
            x = lvl.var;
            h = lvl.h;
            w = lvl.w;
            c = lvl.c;
            levels.push(lvl);
        }
        Ok((FeaturePyramid { levels }, layers))
    }
}

/// Flat gather indices realizing stride-2 space-to-depth over `[T·H·W, C]`
/// rows: output row `(t, i, j)` collects the 2×2 neighbourhood channels in
/// `(di, dj, c)` order.
fn merge_indices(t: usize, h: usize, w: usize, c: usize) -> Vec<usize> {
    let (ho, wo) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(t * ho * wo * 4 * c);
    for tt in 0..t {
        for i in 0..ho {
            for j in 0..wo {
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let row = (tt * h + 2 * i + di) * w + (2 * j + dj);
                    for ch in 0..c {
                        idx.push(row * c + ch);
                    }
                }
            }
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, Lexicon, Scenario, SynthConfig};

    fn setup() -> (ParamStore, Encoder) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(7);
        let cfg = EncoderConfig::default();
        let enc = Encoder::register(&mut store, &cfg, &mut rng).unwrap();
        (store, enc)
    }

    fn video_clip(seed: u64) -> (Tensor, usize, Vec<u32>, Vec<bool>) {
        let cfg = SynthConfig { t_v: 4, ..SynthConfig::default() };
        let video = generate(seed, Scenario::StaticTarget, &cfg).unwrap();
        let enc_cfg = EncoderConfig::default();
        let mut data = Vec::new();
        for f in &video.frames {
            data.extend_from_slice(&f.to_unit_rows());
        }
        let clip = Tensor::new(&[4 * enc_cfg.input_h * enc_cfg.input_w, 3], data).unwrap();
        (clip, 4, video.tokens.clone(), video.verb_flags.clone())
    }

    #[test]
    fn default_config_level_shapes() {
        let (store, enc) = setup();
        let (clip, t, _, _) = video_clip(3);
        let mut g = Graph::new();
        let py = enc.encode_frames(&mut g, &store, &clip, t).unwrap();
        let dims: Vec<(usize, usize, usize)> = py.levels.iter().map(|l| (l.h, l.w, l.c)).collect();
        assert_eq!(dims, [(16, 16, 16), (8, 8, 32), (4, 4, 64)]);
        for l in &py.levels {
            assert_eq!(g.val(l.var).rows(), t * l.h * l.w);
            assert_eq!(g.val(l.var).cols(), l.c);
        }
    }

    #[test]
    fn identical_frames_give_identical_level_slices() {
        let (store, enc) = setup();
        let (clip, t, _, _) = video_clip(5);
        // Overwrite frame 2 with frame 0's pixels.
        let mut data = clip.data().to_vec();
        let frame_elems = 32 * 32 * 3;
        let (src, dst) = (0, 2 * frame_elems);
        for k in 0..frame_elems {
            data[dst + k] = data[src + k];
        }
        let clip = Tensor::new(&[t * 32 * 32, 3], data).unwrap();
        let mut g = Graph::new();
        let py = enc.encode_frames(&mut g, &store, &clip, t).unwrap();
        for lvl in &py.levels {
            let v = g.val(lvl.var);
            let fr = lvl.frame_rows();
            for r in 0..fr {
                for c in 0..lvl.c {
                    assert_eq!(v.at2(r, c), v.at2(2 * fr + r, c));
                }
            }
        }
    }

    #[test]
    fn permuting_frames_permutes_level_slices() {
        let (store, enc) = setup();
        let (clip, t, _, _) = video_clip(9);
        let frame_elems = 32 * 32 * 3;
        let mut swapped = clip.data().to_vec();
        for k in 0..frame_elems {
            swapped.swap(k, 3 * frame_elems + k);
        }
        let swapped = Tensor::new(&[t * 32 * 32, 3], swapped).unwrap();
        let mut g = Graph::new();
        let a = enc.encode_frames(&mut g, &store, &clip, t).unwrap();
        let mut g2 = Graph::new();
        let b = enc.encode_frames(&mut g2, &store, &swapped, t).unwrap();
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            let (va, vb) = (g.val(la.var), g2.val(lb.var));
            let fr = la.frame_rows();
            for r in 0..fr {
                for c in 0..la.c {
                    assert_eq!(va.at2(r, c), vb.at2(3 * fr + r, c));
                    assert_eq!(va.at2(3 * fr + r, c), vb.at2(r, c));
                    assert_eq!(va.at2(fr + r, c), vb.at2(fr + r, c));
                }
            }
        }
    }

    #[test]
    fn cls_only_input_has_one_row() {
        let (store, enc) = setup();
        let mut g = Graph::new();
        let e = enc
            .encode_text(&mut g, &store, &[crate::synth::CLS_ID], &[false])
            .unwrap();
        for layer in &e.layers {
            assert_eq!(g.val(*layer).shape(), &[1, enc.cfg.c_t]);
        }
    }

    #[test]
    fn permuting_tokens_changes_outputs() {
        let (store, enc) = setup();
        let lex = Lexicon::standard();
        let (toks, flags) = lex.tokenize("the red square moving right").unwrap();
        let mut permuted = toks.clone();
        // Swap two non-[CLS] tokens.
        permuted.swap(1, 2);
        let mut g = Graph::new();
        let a = enc.encode_text(&mut g, &store, &toks, &flags).unwrap();
        let mut g2 = Graph::new();
        let b = enc.encode_text(&mut g2, &store, &permuted, &flags).unwrap();
        let (va, vb) = (g.val(a.last()), g2.val(b.last()));
        assert_ne!(va.data(), vb.data(), "positional encoding must break permutation symmetry");
    }

    #[test]
    fn text_encoding_is_deterministic() {
        let (store, enc) = setup();
        let lex = Lexicon::standard();
        let (toks, flags) = lex.tokenize("the blue circle staying still").unwrap();
        let mut g = Graph::new();
        let a = enc.encode_text(&mut g, &store, &toks, &flags).unwrap();
        let mut g2 = Graph::new();
        let b = enc.encode_text(&mut g2, &store, &toks, &flags).unwrap();
        assert_eq!(g.val(a.last()).data(), g2.val(b.last()).data());
    }

    #[test]
    fn out_of_range_token_rejected() {
        let (store, enc) = setup();
        let mut g = Graph::new();
        let bad = enc.encode_text(&mut g, &store, &[9999], &[false]);
        assert!(bad.is_err());
    }

    #[test]
    fn text_weights_are_frozen_visual_trainable_at_birth() {
        let (store, _) = setup();
        for (_, name, _, trainable) in store.iter() {
            if name.starts_with("encoder.text.") {
                assert!(!trainable, "{name} must be frozen");
            } else if name.starts_with("encoder.visual.") {
                assert!(trainable, "{name} starts trainable for promptable pretraining");
            }
        }
    }

    #[test]
    fn from_store_roundtrip_matches() {
        let (store, enc) = setup();
        let enc2 = Encoder::from_store(&store, &enc.cfg).unwrap();
        let (clip, t, toks, flags) = video_clip(11);
        let mut g = Graph::new();
        let a = enc.encode_joint(&mut g, &store, &clip, t, &toks, &flags, None).unwrap();
        let mut g2 = Graph::new();
        let b = enc2.encode_joint(&mut g2, &store, &clip, t, &toks, &flags, None).unwrap();
        assert_eq!(g.val(a.0.finest().var).data(), g2.val(b.0.finest().var).data());
        assert_eq!(g.val(a.1.last()).data(), g2.val(b.1.last()).data());
    }

    #[test]
    fn strict_halving_violation_rejected() {
        let cfg = EncoderConfig { input_h: 30, ..EncoderConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
