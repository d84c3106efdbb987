//! Captioned synthetic videos of moving geometric shapes.
//!
//! Each video is scripted: shapes follow parametric trajectories, one
//! shape is the caption's target, and ground-truth masks come from the
//! same rasterizer that draws the frames, so the generator is its own
//! oracle. Scenarios cover the situations the model has to handle:
//! a lone static target, same-looking shapes told apart only by their
//! motion, targets that appear mid-video, crowded scenes, and occlusion.
//!
//! Everything is a pure function of the seed; regenerating with the same
//! seed is bit-identical.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::metrics::Mask;
use crate::rng::Rng;

/// Color palette: (caption word, RGB).
pub const PALETTE: [(&str, [u8; 3]); 4] = [
    ("red", [220, 50, 47]),
    ("green", [64, 190, 70]),
    ("blue", [56, 100, 220]),
    ("yellow", [226, 208, 60]),
];

/// Token id of the sentence-summary token.
pub const CLS_ID: u32 = 0;
/// Token id of the padding token (reserved; captions are not padded).
pub const PAD_ID: u32 = 1;

/// Fixed vocabulary with explicit verb flags. Verb identification is a
/// lexicon property, not inferred from text.
#[derive(Debug, Clone)]
pub struct Lexicon {
    words: Vec<(&'static str, bool)>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::standard()
    }
}

impl Lexicon {
    /// The vocabulary used by every caption this generator can emit.
    pub fn standard() -> Lexicon {
        let words = vec![
            ("[CLS]", false),
            ("[PAD]", false),
            ("the", false),
            ("red", false),
            ("green", false),
            ("blue", false),
            ("yellow", false),
            ("square", false),
            ("circle", false),
            ("triangle", false),
            ("moving", true),
            ("left", false),
            ("right", false),
            ("up", false),
            ("down", false),
            ("growing", true),
            ("shrinking", true),
            ("appearing", true),
            ("staying", true),
            ("still", false),
        ];
        Lexicon { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.words.iter().position(|(w, _)| *w == word).map(|i| i as u32)
    }

    pub fn is_verb(&self, id: u32) -> bool {
        self.words.get(id as usize).is_some_and(|(_, v)| *v)
    }

    /// Splits on whitespace, prefixes `[CLS]`, and copies verb flags.
    pub fn tokenize(&self, caption: &str) -> Result<(Vec<u32>, Vec<bool>)> {
        let mut ids = vec![CLS_ID];
        let mut flags = vec![false];
        for word in caption.split_whitespace() {
            let id = self.id(word).ok_or_else(|| CoreError::InvalidArgument {
                op: "tokenize",
                detail: format!("word {word:?} not in lexicon"),
            })?;
            ids.push(id);
            flags.push(self.is_verb(id));
        }
        Ok((ids, flags))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
        }
    }

    const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];
}

/// Scripted behavior over the whole video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    MoveLeft,
    MoveRight,
    MoveUp,
    MoveDown,
    Grow,
    Shrink,
    /// Invisible before frame `at` (0-indexed), static afterwards.
    AppearAt { at: usize },
    Stay,
}

impl Action {
    /// Caption verb phrase of the action.
    pub fn phrase(self) -> &'static str {
        match self {
            Action::MoveLeft => "moving left",
            Action::MoveRight => "moving right",
            Action::MoveUp => "moving up",
            Action::MoveDown => "moving down",
            Action::Grow => "growing",
            Action::Shrink => "shrinking",
            Action::AppearAt { .. } => "appearing",
            Action::Stay => "staying still",
        }
    }

    /// Whether two actions read the same in a caption.
    pub fn same_phrase(self, other: Action) -> bool {
        self.phrase() == other.phrase()
    }

    fn direction(self) -> (f64, f64) {
        match self {
            Action::MoveLeft => (-1.0, 0.0),
            Action::MoveRight => (1.0, 0.0),
            Action::MoveUp => (0.0, -1.0),
            Action::MoveDown => (0.0, 1.0),
            _ => (0.0, 0.0),
        }
    }

    const MOTIONS: [Action; 6] =
        [Action::MoveLeft, Action::MoveRight, Action::MoveUp, Action::MoveDown, Action::Grow, Action::Shrink];
}

/// One scripted shape. `speed` is pixels/frame for movers and the
/// size-change rate for grow/shrink; `(cx, cy)` is the center at t = 0
/// in (column, row) pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub color: usize,
    pub size: f64,
    pub cx: f64,
    pub cy: f64,
    pub action: Action,
    pub speed: f64,
}

impl ShapeSpec {
    pub fn appear_at(&self) -> usize {
        match self.action {
            Action::AppearAt { at } => at,
            _ => 0,
        }
    }

    pub fn exists_at(&self, t: usize) -> bool {
        t >= self.appear_at()
    }

    pub fn center_at(&self, t: usize) -> (f64, f64) {
        let (dx, dy) = self.action.direction();
        (self.cx + dx * self.speed * t as f64, self.cy + dy * self.speed * t as f64)
    }

    pub fn size_at(&self, t: usize) -> f64 {
        match self.action {
            Action::Grow => self.size + self.speed * t as f64,
            Action::Shrink => (self.size - self.speed * t as f64).max(1.2),
            _ => self.size,
        }
    }

    fn contains(&self, t: usize, x: f64, y: f64) -> bool {
        let (cx, cy) = self.center_at(t);
        let s = self.size_at(t);
        let (dx, dy) = (x - cx, y - cy);
        match self.kind {
            ShapeKind::Square => dx.abs() <= s && dy.abs() <= s,
            ShapeKind::Circle => dx * dx + dy * dy <= s * s,
            ShapeKind::Triangle => {
                // upward triangle: apex (cx, cy−s), base y = cy+s spanning ±s
                if dy < -s || dy > s {
                    return false;
                }
                // half-width grows linearly from 0 at the apex to s at the base
                let half = s * (dy + s) / (2.0 * s);
                dx.abs() <= half
            }
        }
    }
}

/// Rasterizes one shape alone on an `h`×`w` canvas (empty before its
/// appearance frame). Occlusion by other shapes is not considered here.
pub fn rasterize(spec: &ShapeSpec, t: usize, h: usize, w: usize) -> Mask {
    let mut m = Mask::empty(h, w);
    if !spec.exists_at(t) {
        return m;
    }
    for i in 0..h {
        for j in 0..w {
            if spec.contains(t, j as f64, i as f64) {
                m.set(i, j, true);
            }
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    StaticTarget,
    ActionDisambiguation,
    LateAppearing,
    MultiInstance,
    Occlusion,
}

impl Scenario {
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::StaticTarget => "static-target",
            Scenario::ActionDisambiguation => "action-disambiguation",
            Scenario::LateAppearing => "late-appearing",
            Scenario::MultiInstance => "multi-instance",
            Scenario::Occlusion => "occlusion",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Scenario> {
        Ok(match tag {
            "static-target" => Scenario::StaticTarget,
            "action-disambiguation" => Scenario::ActionDisambiguation,
            "late-appearing" => Scenario::LateAppearing,
            "multi-instance" => Scenario::MultiInstance,
            "occlusion" => Scenario::Occlusion,
            _ => {
                return Err(CoreError::InvalidArgument {
                    op: "Scenario::from_tag",
                    detail: format!("unknown scenario {tag:?}"),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub h: usize,
    pub w: usize,
    pub t_v: usize,
    pub n_distractors: usize,
    /// Both canvas dimensions must be divisible by this (the encoder's
    /// total downsampling factor).
    pub divisor: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { h: 32, w: 32, t_v: 16, n_distractors: 2, divisor: 8 }
    }
}

/// One RGB frame, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub h: usize,
    pub w: usize,
    pub rgb: Vec<u8>,
}

impl Frame {
    /// Pixel rows scaled to [0, 1]: shape `(h·w) × 3` flattened row-major.
    pub fn to_unit_rows(&self) -> Vec<f64> {
        self.rgb.iter().map(|&b| b as f64 / 255.0).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub frames: Vec<Frame>,
    pub target_masks: Vec<Mask>,
    pub caption: String,
    pub tokens: Vec<u32>,
    pub verb_flags: Vec<bool>,
    pub scenario: Scenario,
    pub seed: u64,
    pub target: ShapeSpec,
    pub distractors: Vec<ShapeSpec>,
    /// Draw-order position of the target among the distractors
    /// (0 = drawn first / bottom-most).
    pub target_layer: usize,
}

impl SyntheticVideo {
    pub fn h(&self) -> usize {
        self.frames[0].h
    }

    pub fn w(&self) -> usize {
        self.frames[0].w
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Shapes in draw order (later entries are painted on top).
    pub fn draw_order(&self) -> Vec<&ShapeSpec> {
        let mut order: Vec<&ShapeSpec> = Vec::with_capacity(self.distractors.len() + 1);
        for (i, d) in self.distractors.iter().enumerate() {
            if i == self.target_layer {
                order.push(&self.target);
            }
            order.push(d);
        }
        if self.target_layer >= self.distractors.len() {
            order.push(&self.target);
        }
        order
    }

    /// Index of the target within [`SyntheticVideo::draw_order`].
    pub fn target_draw_index(&self) -> usize {
        self.target_layer.min(self.distractors.len())
    }

    /// Visible (top-most-owner) mask of the shape at a draw-order index.
    pub fn visible_mask(&self, draw_idx: usize, t: usize) -> Mask {
        let order = self.draw_order();
        let (h, w) = (self.h(), self.w());
        let mut owner: Vec<Option<usize>> = vec![None; h * w];
        for (idx, spec) in order.iter().enumerate() {
            if !spec.exists_at(t) {
                continue;
            }
            let m = rasterize(spec, t, h, w);
            for (p, &on) in m.bits().iter().enumerate() {
                if on {
                    owner[p] = Some(idx);
                }
            }
        }
        let bits = owner.iter().map(|&o| o == Some(draw_idx)).collect();
        Mask::new(h, w, bits).expect("owner map has h*w entries")
    }
}

fn render_frame(order: &[&ShapeSpec], t: usize, h: usize, w: usize) -> (Frame, Vec<Option<usize>>) {
    let mut rgb = vec![0u8; h * w * 3];
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for (idx, spec) in order.iter().enumerate() {
        if !spec.exists_at(t) {
            continue;
        }
        let color = PALETTE[spec.color].1;
        for i in 0..h {
            for j in 0..w {
                if spec.contains(t, j as f64, i as f64) {
                    let p = i * w + j;
                    owner[p] = Some(idx);
                    rgb[p * 3..p * 3 + 3].copy_from_slice(&color);
                }
            }
        }
    }
    (Frame { h, w, rgb }, owner)
}

struct Placer<'a> {
    rng: &'a mut Rng,
    cfg: &'a SynthConfig,
}

impl Placer<'_> {
    fn size(&mut self) -> f64 {
        self.rng.uniform_in(2.5, 4.5)
    }

    /// Start center such that the whole scripted path stays inside the
    /// canvas with margin `size`.
    fn place(&mut self, kind: ShapeKind, color: usize, action: Action, size: f64) -> Result<ShapeSpec> {
        let (h, w, tv) = (self.cfg.h as f64, self.cfg.w as f64, (self.cfg.t_v - 1) as f64);
        let m = size + 0.5;
        let span_x = w - 1.0 - 2.0 * m;
        let span_y = h - 1.0 - 2.0 * m;
        if span_x <= 0.0 || span_y <= 0.0 {
            return Err(CoreError::Unsatisfiable {
                detail: format!("shape of size {size:.1} does not fit a {}x{} canvas", self.cfg.h, self.cfg.w),
            });
        }
        let (dx, dy) = action.direction();
        let speed = match action {
            Action::MoveLeft | Action::MoveRight | Action::MoveUp | Action::MoveDown => {
                let span = if dx != 0.0 { span_x } else { span_y };
                let hi = (span * 0.8 / tv.max(1.0)).min(2.0);
                if hi < 0.5 {
                    return Err(CoreError::Unsatisfiable {
                        detail: format!("no room to move on a {}x{} canvas over {} frames", self.cfg.h, self.cfg.w, self.cfg.t_v),
                    });
                }
                self.rng.uniform_in(0.5f64.min(hi * 0.5), hi)
            }
            Action::Grow => {
                let max_size = (h.min(w) / 2.0 - 2.0).min(8.0);
                ((max_size - size) / tv.max(1.0)).max(0.05)
            }
            Action::Shrink => ((size - 1.8) / tv.max(1.0)).max(0.05),
            _ => 0.0,
        };
        // the largest size over the script bounds the placement margin
        let max_s = match action {
            Action::Grow => size + speed * tv,
            _ => size,
        };
        let mm = max_s + 0.5;
        let disp = speed * tv;
        let (mut x_lo, mut x_hi) = (mm, w - 1.0 - mm);
        let (mut y_lo, mut y_hi) = (mm, h - 1.0 - mm);
        if dx < 0.0 {
            x_lo += disp;
        } else if dx > 0.0 {
            x_hi -= disp;
        }
        if dy < 0.0 {
            y_lo += disp;
        } else if dy > 0.0 {
            y_hi -= disp;
        }
        if x_lo >= x_hi || y_lo >= y_hi {
            return Err(CoreError::Unsatisfiable {
                detail: format!("trajectory does not fit: x [{x_lo:.1}, {x_hi:.1}], y [{y_lo:.1}, {y_hi:.1}]"),
            });
        }
        let cx = self.rng.uniform_in(x_lo, x_hi);
        let cy = self.rng.uniform_in(y_lo, y_hi);
        Ok(ShapeSpec { kind, color, size, cx, cy, action, speed })
    }

    /// Re-places until the new shape's start is separated from all
    /// existing ones, relaxing the required gap if the scene is crowded
    /// (partial initial overlap is tolerable; draw order resolves it).
    fn place_apart(
        &mut self,
        kind: ShapeKind,
        color: usize,
        action: Action,
        size: f64,
        others: &[ShapeSpec],
    ) -> Result<ShapeSpec> {
        let mut last = None;
        for relax in [1.0, 0.5, 0.0] {
            for _ in 0..200 {
                let s = self.place(kind, color, action, size)?;
                let t0 = s.appear_at();
                let clear = others.iter().all(|o| {
                    let (ox, oy) = o.center_at(t0);
                    let (sx, sy) = s.center_at(t0);
                    let d2 = (ox - sx) * (ox - sx) + (oy - sy) * (oy - sy);
                    let need = (o.size_at(t0) + s.size_at(t0) + 1.5) * relax;
                    d2 >= need * need
                });
                if clear {
                    return Ok(s);
                }
                last = Some(s);
            }
        }
        Ok(last.expect("at least one placement sampled"))
    }

    fn distinct_attrs(&mut self, taken: &[(usize, ShapeKind)]) -> Result<(usize, ShapeKind)> {
        for _ in 0..100 {
            let color = self.rng.below(PALETTE.len() as u64) as usize;
            let kind = ShapeKind::ALL[self.rng.below(3) as usize];
            if !taken.contains(&(color, kind)) {
                return Ok((color, kind));
            }
        }
        Err(CoreError::Unsatisfiable { detail: "ran out of distinct color/kind combinations".into() })
    }
}

/// Builds one scripted video. Deterministic in `seed`.
pub fn generate(seed: u64, scenario: Scenario, cfg: &SynthConfig) -> Result<SyntheticVideo> {
    if cfg.divisor == 0 || cfg.h % cfg.divisor != 0 || cfg.w % cfg.divisor != 0 {
        return Err(CoreError::InvalidArgument {
            op: "generate",
            detail: format!("canvas {}x{} not divisible by {}", cfg.h, cfg.w, cfg.divisor),
        });
    }
    if cfg.t_v < 2 {
        return Err(CoreError::InvalidArgument { op: "generate", detail: format!("t_v {} < 2", cfg.t_v) });
    }
    if cfg.n_distractors > 3 {
        return Err(CoreError::Unsatisfiable {
            detail: format!("{} distractors exceed what the canvas fits (max 3)", cfg.n_distractors),
        });
    }
    let mut rng = Rng::new(seed);
    let mut placer = Placer { rng: &mut rng, cfg };

    let t_color = placer.rng.below(PALETTE.len() as u64) as usize;
    let t_kind = ShapeKind::ALL[placer.rng.below(3) as usize];
    let t_size = placer.size();

    let target;
    let mut distractors: Vec<ShapeSpec> = Vec::new();
    let mut target_layer = usize::MAX; // patched below; MAX = draw last

    match scenario {
        Scenario::StaticTarget => {
            target = placer.place(t_kind, t_color, Action::Stay, t_size)?;
            for _ in 0..cfg.n_distractors {
                let (c, k) = placer.distinct_attrs(&[(t_color, t_kind)])?;
                let act = random_motion_or_stay(placer.rng);
                let size = placer.size();
                let mut all = distractors.clone();
                all.push(target.clone());
                distractors.push(placer.place_apart(k, c, act, size, &all)?);
            }
        }
        Scenario::ActionDisambiguation => {
            let t_action = Action::MOTIONS[placer.rng.below(6) as usize];
            target = placer.place(t_kind, t_color, t_action, t_size)?;
            // twin: same look, different action
            let twin_action = twin_action_for(placer.rng, t_action);
            let twin_size = placer.size();
            let twin = placer.place_apart(t_kind, t_color, twin_action, twin_size, &[target.clone()])?;
            distractors.push(twin);
            for _ in 1..cfg.n_distractors.max(1) {
                let (c, k) = placer.distinct_attrs(&[(t_color, t_kind)])?;
                let act = random_motion_or_stay(placer.rng);
                let size = placer.size();
                let mut all = distractors.clone();
                all.push(target.clone());
                distractors.push(placer.place_apart(k, c, act, size, &all)?);
            }
        }
        Scenario::LateAppearing => {
            if cfg.n_distractors == 0 {
                return Err(CoreError::Unsatisfiable {
                    detail: "late-appearing needs at least one distractor visible from frame 0".into(),
                });
            }
            let lo = cfg.t_v.div_ceil(3);
            let hi = (cfg.t_v / 2).max(lo);
            let at = lo + placer.rng.below((hi - lo + 1) as u64) as usize;
            target = placer.place(t_kind, t_color, Action::AppearAt { at }, t_size)?;
            // bait: shares exactly one attribute with the target
            let (b_color, b_kind) = if placer.rng.below(2) == 0 {
                (t_color, *ShapeKind::ALL.iter().find(|&&k| k != t_kind).unwrap())
            } else {
                ((t_color + 1 + placer.rng.below(3) as usize) % PALETTE.len(), t_kind)
            };
            let b_size = placer.size();
            let b_action = random_motion_or_stay(placer.rng);
            let bait = placer.place_apart(b_kind, b_color, b_action, b_size, &[target.clone()])?;
            distractors.push(bait);
            for _ in 1..cfg.n_distractors {
                let (c, k) = placer.distinct_attrs(&[(t_color, t_kind), (b_color, b_kind)])?;
                let size = placer.size();
                let act = random_motion_or_stay(placer.rng);
                let mut all = distractors.clone();
                all.push(target.clone());
                distractors.push(placer.place_apart(k, c, act, size, &all)?);
            }
        }
        Scenario::MultiInstance => {
            if cfg.n_distractors < 2 {
                return Err(CoreError::Unsatisfiable {
                    detail: format!("multi-instance needs ≥ 2 distractors, got {}", cfg.n_distractors),
                });
            }
            let t_action = random_motion_or_stay(placer.rng);
            target = placer.place(t_kind, t_color, t_action, t_size)?;
            let mut taken = vec![(t_color, t_kind)];
            for _ in 0..cfg.n_distractors {
                let (c, k) = placer.distinct_attrs(&taken)?;
                taken.push((c, k));
                let size = placer.size();
                let act = random_motion_or_stay(placer.rng);
                let mut all = distractors.clone();
                all.push(target.clone());
                distractors.push(placer.place_apart(k, c, act, size, &all)?);
            }
        }
        Scenario::Occlusion => {
            if cfg.n_distractors == 0 {
                return Err(CoreError::Unsatisfiable { detail: "occlusion needs a distractor to occlude".into() });
            }
            // target crosses the canvas; the occluder crosses the other way
            // on the same row, drawn on top.
            let rightward = placer.rng.below(2) == 0;
            let t_action = if rightward { Action::MoveRight } else { Action::MoveLeft };
            target = placer.place(t_kind, t_color, t_action, t_size)?;
            let (o_color, o_kind) = placer.distinct_attrs(&[(t_color, t_kind)])?;
            let o_size = placer.size().max(t_size);
            let o_action = if rightward { Action::MoveLeft } else { Action::MoveRight };
            let mut occluder = placer.place(o_kind, o_color, o_action, o_size)?;
            occluder.cy = target.cy; // same row, guaranteed crossing
            // start on the opposite side of the target's path midpoint
            let mid_t = (cfg.t_v - 1) / 2;
            let (tx, _) = target.center_at(mid_t);
            let (ox, _) = occluder.center_at(mid_t);
            occluder.cx += tx - ox; // align centers at mid-video → full crossing
            // keep the occluder inside the canvas
            let m = o_size + 0.5;
            let disp = occluder.speed * (cfg.t_v - 1) as f64;
            let (lo, hi) = if rightward {
                // occluder moves left: start in [m + disp, w−1−m]
                (m + disp, cfg.w as f64 - 1.0 - m)
            } else {
                (m, cfg.w as f64 - 1.0 - m - disp)
            };
            occluder.cx = occluder.cx.clamp(lo.min(hi), hi.max(lo));
            distractors.push(occluder);
            target_layer = 0; // target below: the occluder can hide it
            for _ in 1..cfg.n_distractors {
                let (c, k) = placer.distinct_attrs(&[(t_color, t_kind), (o_color, o_kind)])?;
                let size = placer.size();
                let act = random_motion_or_stay(placer.rng);
                let mut all = distractors.clone();
                all.push(target.clone());
                distractors.push(placer.place_apart(k, c, act, size, &all)?);
            }
        }
    }

    if target_layer == usize::MAX {
        target_layer = distractors.len(); // target drawn last (fully visible)
    }

    let caption = format!(
        "the {} {} {}",
        PALETTE[target.color].0,
        target.kind.word(),
        target.action.phrase()
    );
    let lexicon = Lexicon::standard();
    let (tokens, verb_flags) = lexicon.tokenize(&caption)?;

    let video = assemble(target, distractors, target_layer, caption, tokens, verb_flags, scenario, seed, cfg)?;
    validate(&video)?;
    Ok(video)
}

fn random_motion_or_stay(rng: &mut Rng) -> Action {
    let i = rng.below(7) as usize;
    if i == 6 {
        Action::Stay
    } else {
        Action::MOTIONS[i]
    }
}

fn twin_action_for(rng: &mut Rng, target: Action) -> Action {
    // stay, or a different motion — never the same phrase
    loop {
        let cand = random_motion_or_stay(rng);
        if !cand.same_phrase(target) {
            return cand;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    target: ShapeSpec,
    distractors: Vec<ShapeSpec>,
    target_layer: usize,
    caption: String,
    tokens: Vec<u32>,
    verb_flags: Vec<bool>,
    scenario: Scenario,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<SyntheticVideo> {
    let mut video = SyntheticVideo {
        frames: Vec::with_capacity(cfg.t_v),
        target_masks: Vec::with_capacity(cfg.t_v),
        caption,
        tokens,
        verb_flags,
        scenario,
        seed,
        target,
        distractors,
        target_layer,
    };
    let order: Vec<ShapeSpec> = video.draw_order().into_iter().cloned().collect();
    let refs: Vec<&ShapeSpec> = order.iter().collect();
    let tgt_idx = video.target_draw_index();
    for t in 0..cfg.t_v {
        let (frame, owner) = render_frame(&refs, t, cfg.h, cfg.w);
        let bits = owner.iter().map(|&o| o == Some(tgt_idx)).collect();
        video.frames.push(frame);
        video.target_masks.push(Mask::new(cfg.h, cfg.w, bits)?);
    }
    Ok(video)
}

/// Construction invariants, checked on every generated video.
fn validate(v: &SyntheticVideo) -> Result<()> {
    // caption uniqueness: exactly one shape matches color+kind+phrase
    let matches = v
        .draw_order()
        .iter()
        .filter(|s| s.color == v.target.color && s.kind == v.target.kind && s.action.same_phrase(v.target.action))
        .count();
    if matches != 1 {
        return Err(CoreError::Unsatisfiable {
            detail: format!("caption matches {matches} shapes, expected exactly 1"),
        });
    }
    // the target drawn on top must be visible whenever it exists
    if v.target_layer == v.distractors.len() {
        for t in 0..v.len() {
            if v.target.exists_at(t) && v.target_masks[t].is_blank() {
                return Err(CoreError::Unsatisfiable { detail: format!("target invisible at frame {t}") });
            }
        }
    }
    Ok(())
}
