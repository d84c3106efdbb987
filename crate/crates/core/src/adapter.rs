//! Cross-modal temporal adapter: per-level bottleneck down/up projections
//! around three interactions — windowed spatio-temporal self-attention over
//! non-overlapping sub-volumes (`hsa`), visual-to-text cross-attention with
//! multiplicative modulation (`vta`), and text-to-visual cross-attention over
//! the clip-mean map (`tva`) — composed residually so that zero-initialized
//! up-projections leave the frozen backbone's behaviour untouched.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::encoder::{EncoderConfig, LevelFeatures, LevelHook};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::pe::pe2d_at;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Adapter hyper-parameters shared across levels.
#[derive(Debug, Clone, PartialEq)]
pub struct CmtConfig {
    /// Bottleneck width `b` shared by both modalities at every level.
    pub bottleneck: usize,
    /// Sub-volume side `P_k` per level; must divide that level's `H_k`, `W_k`.
    pub patch_sizes: Vec<usize>,
    /// Enable the windowed spatio-temporal self-attention stage.
    pub hsa: bool,
    /// Enable visual-to-text modulation.
    pub vta: bool,
    /// Enable text-to-visual modulation.
    pub tva: bool,
}

impl Default for CmtConfig {
    fn default() -> Self {
        CmtConfig { bottleneck: 8, patch_sizes: alloc::vec![4, 2, 2], hsa: true, vta: true, tva: true }
    }
}

impl CmtConfig {
    /// Bottleneck-MLP-only ablation: all three interaction stages skipped.
    pub fn mlp_only(mut self) -> Self {
        self.hsa = false;
        self.vta = false;
        self.tva = false;
        self
    }

    pub fn validate(&self, enc: &EncoderConfig) -> Result<()> {
        if self.bottleneck == 0 || self.bottleneck % 4 != 0 {
            return Err(CoreError::InvalidArgument {
                op: "CmtConfig",
                detail: format!(
                    "bottleneck width must be a positive multiple of 4 (2-D codes), got {}",
                    self.bottleneck
                ),
            });
        }
        if self.patch_sizes.len() != enc.n_levels() {
            return Err(CoreError::InvalidArgument {
                op: "CmtConfig",
                detail: format!(
                    "{} patch sizes for {} levels",
                    self.patch_sizes.len(),
                    enc.n_levels()
                ),
            });
        }
        for (k, &p) in self.patch_sizes.iter().enumerate() {
            let (h, w) = (enc.level_h(k), enc.level_w(k));
            if p == 0 || h % p != 0 || w % p != 0 {
                return Err(CoreError::InvalidArgument {
                    op: "CmtConfig",
                    detail: format!("patch size {p} does not tile level {k} ({h}x{w})"),
                });
            }
        }
        Ok(())
    }
}

struct LinearIds {
    w: ParamId,
    b: ParamId,
}

struct AttnIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bv: ParamId,
}

struct CmtLevelIds {
    down_v: LinearIds,
    up_v: LinearIds,
    down_t: LinearIds,
    up_t: LinearIds,
    hsa: AttnIds,
    hsa_out: LinearIds,
    vta: AttnIds,
    tva: AttnIds,
}

/// Handle to all adapter parameters plus the per-level patch schedule.
pub struct CmtStack {
    /// Hyper-parameters (bottleneck width, patch schedule, stage switches).
    pub cfg: CmtConfig,
    levels: Vec<CmtLevelIds>,
}

fn register_zero_linear(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<LinearIds> {
    let w = store.register(&format!("{prefix}.w"), Tensor::zeros(&[fan_in, fan_out]), true)?;
    let b = store.register(&format!("{prefix}.b"), Tensor::zeros(&[1, fan_out]), true)?;
    Ok(LinearIds { w, b })
}

fn register_rand_linear(
    store: &mut ParamStore,
    rng: &mut Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<LinearIds> {
    let std = 1.0 / libm::sqrt(fan_in as f64);
    let w = store.register(&format!("{prefix}.w"), Tensor::randn(&[fan_in, fan_out], std, rng), true)?;
    let b = store.register(&format!("{prefix}.b"), Tensor::zeros(&[1, fan_out]), true)?;
    Ok(LinearIds { w, b })
}

fn register_attn(
    store: &mut ParamStore,
    rng: &mut Rng,
    prefix: &str,
    d: usize,
) -> Result<AttnIds> {
    let q = register_rand_linear(store, rng, &format!("{prefix}.q"), d, d)?;
    // Key projections carry no bias: a constant shift of every key moves all
    // scores of a query equally and softmax cancels it exactly.
    let std = 1.0 / libm::sqrt(d as f64);
    let wk = store.register(&format!("{prefix}.k.w"), Tensor::randn(&[d, d], std, rng), true)?;
    let v = register_rand_linear(store, rng, &format!("{prefix}.v"), d, d)?;
    Ok(AttnIds { wq: q.w, bq: q.b, wk, wv: v.w, bv: v.b })
}

fn attn_from_store(store: &ParamStore, prefix: &str) -> Result<AttnIds> {
    Ok(AttnIds {
        wq: store.id(&format!("{prefix}.q.w"))?,
        bq: store.id(&format!("{prefix}.q.b"))?,
        wk: store.id(&format!("{prefix}.k.w"))?,
        wv: store.id(&format!("{prefix}.v.w"))?,
        bv: store.id(&format!("{prefix}.v.b"))?,
    })
}

fn linear_from_store(store: &ParamStore, prefix: &str) -> Result<LinearIds> {
    Ok(LinearIds {
        w: store.id(&format!("{prefix}.w"))?,
        b: store.id(&format!("{prefix}.b"))?,
    })
}

impl CmtStack {
    /// Create and register fresh adapter parameters (all trainable).
    /// Up-projections start at zero so the adapted model's behaviour is
    /// bit-equal to the frozen backbone at initialization.
    pub fn register(
        store: &mut ParamStore,
        enc: &EncoderConfig,
        cfg: &CmtConfig,
        rng: &mut Rng,
    ) -> Result<CmtStack> {
        cfg.validate(enc)?;
        let b = cfg.bottleneck;
        let mut levels = Vec::new();
        for k in 0..enc.n_levels() {
            let c_k = enc.level_c(k);
            let pre = format!("cmt.level{k}");
            levels.push(CmtLevelIds {
                down_v: register_rand_linear(store, rng, &format!("{pre}.down_v"), c_k, b)?,
                up_v: register_zero_linear(store, &format!("{pre}.up_v"), b, c_k)?,
                down_t: register_rand_linear(store, rng, &format!("{pre}.down_t"), enc.c_t, b)?,
                up_t: register_zero_linear(store, &format!("{pre}.up_t"), b, enc.c_t)?,
                hsa: register_attn(store, rng, &format!("{pre}.hsa"), b)?,
                hsa_out: register_rand_linear(store, rng, &format!("{pre}.hsa.out"), b, b)?,
                vta: register_attn(store, rng, &format!("{pre}.vta"), b)?,
                tva: register_attn(store, rng, &format!("{pre}.tva"), b)?,
            });
        }
        Ok(CmtStack { cfg: cfg.clone(), levels })
    }

    /// Re-attach to adapter parameters already in a store.
    pub fn from_store(store: &ParamStore, enc: &EncoderConfig, cfg: &CmtConfig) -> Result<CmtStack> {
        cfg.validate(enc)?;
        let mut levels = Vec::new();
        for k in 0..enc.n_levels() {
            let pre = format!("cmt.level{k}");
            levels.push(CmtLevelIds {
                down_v: linear_from_store(store, &format!("{pre}.down_v"))?,
                up_v: linear_from_store(store, &format!("{pre}.up_v"))?,
                down_t: linear_from_store(store, &format!("{pre}.down_t"))?,
                up_t: linear_from_store(store, &format!("{pre}.up_t"))?,
                hsa: attn_from_store(store, &format!("{pre}.hsa"))?,
                hsa_out: linear_from_store(store, &format!("{pre}.hsa.out"))?,
                vta: attn_from_store(store, &format!("{pre}.vta"))?,
                tva: attn_from_store(store, &format!("{pre}.tva"))?,
            });
        }
        Ok(CmtStack { cfg: cfg.clone(), levels })
    }

    /// Adapt one level, returning the transformed streams plus the
    /// intermediate bottleneck stages (used by component-level oracles).
    pub fn apply_traced(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        level: usize,
        f: LevelFeatures,
        e: Var,
    ) -> Result<(LevelFeatures, Var, CmtTrace)> {
        let ids = &self.levels[level];
        let p = self.cfg.patch_sizes[level];

        // Visual bottleneck stream: down → HSA → VTA → gelu → up + residual.
        let wdv = g.param(store, ids.down_v.w)?;
        let bdv = g.param(store, ids.down_v.b)?;
        let f_down = g.linear(f.var, wdv, Some(bdv))?;
        let e_down = {
            let wdt = g.param(store, ids.down_t.w)?;
            let bdt = g.param(store, ids.down_t.b)?;
            g.linear(e, wdt, Some(bdt))?
        };

        let f_hsa = if self.cfg.hsa {
            let grid = decompose(g, f_down, f.t, f.h, f.w, p)?;
            let attended = hsa(g, store, &grid, ids)?;
            recompose(g, &attended)?
        } else {
            f_down
        };

        let f_vta = if self.cfg.vta {
            vta(g, store, f_hsa, e_down, ids)?
        } else {
            f_hsa
        };

        let mut fv = g.gelu(f_vta)?;
        let wuv = g.param(store, ids.up_v.w)?;
        let buv = g.param(store, ids.up_v.b)?;
        fv = g.linear(fv, wuv, Some(buv))?;
        let f_out = g.add(f.var, fv)?;

        // Text bottleneck stream: down → TVA → gelu → up + residual.
        let e_tva = if self.cfg.tva {
            let f_avg = clip_mean(g, f_hsa, f.t, f.h * f.w)?;
            tva(g, store, e_down, f_avg, ids)?
        } else {
            e_down
        };
        let mut ev = g.gelu(e_tva)?;
        let wut = g.param(store, ids.up_t.w)?;
        let but = g.param(store, ids.up_t.b)?;
        ev = g.linear(ev, wut, Some(but))?;
        let e_out = g.add(e, ev)?;

        Ok((
            LevelFeatures { var: f_out, ..f },
            e_out,
            CmtTrace { f_down, f_hsa, f_vta, e_down, e_tva },
        ))
    }
}

impl LevelHook for CmtStack {
    fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        level: usize,
        f: LevelFeatures,
        e: Var,
    ) -> Result<(LevelFeatures, Var)> {
        let (f2, e2, _) = self.apply_traced(g, store, level, f, e)?;
        Ok((f2, e2))
    }
}

/// Intermediate bottleneck stages of one adapted level.
#[derive(Debug, Clone, Copy)]
pub struct CmtTrace {
    /// Down-projected visual stream `[T·H·W, b]`.
    pub f_down: Var,
    /// After windowed self-attention (or unchanged when disabled).
    pub f_hsa: Var,
    /// After visual-to-text modulation (or unchanged when disabled).
    pub f_vta: Var,
    /// Down-projected text stream `[L+1, b]`.
    pub e_down: Var,
    /// After text-to-visual modulation (or unchanged when disabled).
    pub e_tva: Var,
}

/// A feature volume split into non-overlapping `P×P×T` sub-volumes. Rows of
/// `var` are grouped by sub-volume (`m` rows each, `n` groups) and each row
/// carries its source coordinates.
pub struct PatchGrid {
    /// Sub-volume token rows, `[n·m, width]`.
    pub var: Var,
    /// Global `(i, j, t)` source coordinates, aligned with rows.
    pub coords: Vec<(usize, usize, usize)>,
    /// Number of sub-volumes `N = H·W/P²`.
    pub n: usize,
    /// Tokens per sub-volume `M = P²·T`.
    pub m: usize,
    /// Sub-volume side.
    pub p: usize,
    /// Source volume dims.
    pub t: usize,
    /// Source height.
    pub h: usize,
    /// Source width.
    pub w: usize,
}

/// Split `x = [T·H·W, width]` (rows in `(t, i, j)` order) into the patch
/// grid. Exact partition: `recompose(decompose(x)) == x` bit-for-bit.
pub fn decompose(g: &mut Graph, x: Var, t: usize, h: usize, w: usize, p: usize) -> Result<PatchGrid> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(CoreError::InvalidArgument {
            op: "decompose",
            detail: format!("patch size {p} does not divide {h}x{w}"),
        });
    }
    let width = g.val(x).cols();
    if g.val(x).rows() != t * h * w {
        return Err(CoreError::ShapeMismatch {
            op: "decompose",
            detail: format!("{} rows vs T·H·W = {}", g.val(x).rows(), t * h * w),
        });
    }
    let n = (h / p) * (w / p);
    let m = p * p * t;
    let mut idx = Vec::with_capacity(n * m * width);
    let mut coords = Vec::with_capacity(n * m);
    for pi in 0..h / p {
        for pj in 0..w / p {
            for tt in 0..t {
                for li in 0..p {
                    for lj in 0..p {
                        let (i, j) = (pi * p + li, pj * p + lj);
                        coords.push((i, j, tt));
                        let row = (tt * h + i) * w + j;
                        for c in 0..width {
                            idx.push(row * width + c);
                        }
                    }
                }
            }
        }
    }
    let var = g.gather(x, idx, &[n * m, width])?;
    Ok(PatchGrid { var, coords, n, m, p, t, h, w })
}

/// Invert [`decompose`]: back to `[T·H·W, width]` rows in `(t, i, j)` order.
pub fn recompose(g: &mut Graph, grid: &PatchGrid) -> Result<Var> {
    let width = g.val(grid.var).cols();
    let total = grid.t * grid.h * grid.w;
    let mut dest_of_src = alloc::vec![0usize; total];
    for (r, &(i, j, tt)) in grid.coords.iter().enumerate() {
        dest_of_src[(tt * grid.h + i) * grid.w + j] = r;
    }
    let mut idx = Vec::with_capacity(total * width);
    for &src in &dest_of_src {
        for c in 0..width {
            idx.push(src * width + c);
        }
    }
    g.gather(grid.var, idx, &[total, width])
}

/// Windowed spatio-temporal self-attention: per sub-volume independently,
/// spatial + temporal sinusoidal codes are added to the query/key stream
/// (values see the raw tokens) and one self-attention runs over the `M`
/// tokens. No information crosses sub-volume boundaries.
fn hsa(g: &mut Graph, store: &ParamStore, grid: &PatchGrid, ids: &CmtLevelIds) -> Result<PatchGrid> {
    let b = g.val(grid.var).cols();
    let wq = g.param(store, ids.hsa.wq)?;
    let bq = g.param(store, ids.hsa.bq)?;
    let wk = g.param(store, ids.hsa.wk)?;
    let wv = g.param(store, ids.hsa.wv)?;
    let bv = g.param(store, ids.hsa.bv)?;
    let wo = g.param(store, ids.hsa_out.w)?;
    let bo = g.param(store, ids.hsa_out.b)?;
    let mut outs = Vec::with_capacity(grid.n);
    for s in 0..grid.n {
        let rows = g.rows_range(grid.var, s * grid.m, grid.m)?;
        let pe = g.leaf(sub_volume_codes(&grid.coords[s * grid.m..(s + 1) * grid.m], b)?)?;
        let xpe = g.add(rows, pe)?;
        let q = g.linear(xpe, wq, Some(bq))?;
        let k = g.linear(xpe, wk, None)?;
        let v = g.linear(rows, wv, Some(bv))?;
        let a = g.attention(q, k, v)?;
        let o = g.linear(a, wo, Some(bo))?;
        outs.push(o);
    }
    let var = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 0)? };
    Ok(PatchGrid {
        var,
        coords: grid.coords.clone(),
        n: grid.n,
        m: grid.m,
        p: grid.p,
        t: grid.t,
        h: grid.h,
        w: grid.w,
    })
}

/// Sum of 2-D spatial and 1-D temporal codes for each token of a sub-volume.
fn sub_volume_codes(coords: &[(usize, usize, usize)], b: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(coords.len() * b);
    for &(i, j, tt) in coords {
        let spatial = pe2d_at(i as f64, j as f64, b)?;
        let temporal = crate::pe::pe1d(tt, b)?;
        for c in 0..b {
            data.push(spatial.data()[c] + temporal.data()[c]);
        }
    }
    Tensor::new(&[coords.len(), b], data)
}

/// Visual-to-text modulation: `F := F ∘ CA(F, E)` with visual queries over
/// all text tokens. Queries are per-pixel rows, so evaluating all frames at
/// once equals the per-frame definition row for row.
fn vta(g: &mut Graph, store: &ParamStore, f: Var, e_down: Var, ids: &CmtLevelIds) -> Result<Var> {
    if g.val(e_down).rows() == 0 {
        return Err(CoreError::InvalidArgument {
            op: "vta",
            detail: String::from("empty text"),
        });
    }
    let wq = g.param(store, ids.vta.wq)?;
    let bq = g.param(store, ids.vta.bq)?;
    let wk = g.param(store, ids.vta.wk)?;
    let wv = g.param(store, ids.vta.wv)?;
    let bv = g.param(store, ids.vta.bv)?;
    let q = g.linear(f, wq, Some(bq))?;
    let k = g.linear(e_down, wk, None)?;
    let v = g.linear(e_down, wv, Some(bv))?;
    let ca = g.attention(q, k, v)?;
    g.mul(f, ca)
}

/// Text-to-visual modulation: `E := E ∘ CA(E, F_avg)` with text queries over
/// the clip-mean visual map.
fn tva(g: &mut Graph, store: &ParamStore, e_down: Var, f_avg: Var, ids: &CmtLevelIds) -> Result<Var> {
    let wq = g.param(store, ids.tva.wq)?;
    let bq = g.param(store, ids.tva.bq)?;
    let wk = g.param(store, ids.tva.wk)?;
    let wv = g.param(store, ids.tva.wv)?;
    let bv = g.param(store, ids.tva.bv)?;
    let q = g.linear(e_down, wq, Some(bq))?;
    let k = g.linear(f_avg, wk, None)?;
    let v = g.linear(f_avg, wv, Some(bv))?;
    let ca = g.attention(q, k, v)?;
    g.mul(e_down, ca)
}

/// Mean over the clip axis of `[T·S, width]` rows (t-major): `[S, width]`.
fn clip_mean(g: &mut Graph, x: Var, t: usize, s: usize) -> Result<Var> {
    let width = g.val(x).cols();
    if t == 1 {
        return Ok(x);
    }
    let stacked = g.reshape(x, &[t, s * width])?;
    let mean = g.mean_axis(stacked, 0)?;
    g.reshape(mean, &[s, width])
}

/// Query–key pair count of the windowed attention: `N·M² = H·W·P²·T²`.
pub fn hsa_pair_count(h: usize, w: usize, t: usize, p: usize) -> u128 {
    let n = (h / p) as u128 * (w / p) as u128;
    let m = (p * p * t) as u128;
    n * m * m
}

/// Query–key pair count of dense spatio-temporal attention: `(T·H·W)²`.
pub fn dense_pair_count(h: usize, w: usize, t: usize) -> u128 {
    let tokens = (t * h * w) as u128;
    tokens * tokens
}
