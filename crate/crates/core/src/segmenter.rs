//! Promptable segmentation core: memory attention over a bounded FIFO bank
//! of encoded past predictions, a two-round two-way attention mask decoder
//! producing a mask token and full-resolution logits, a memory encoder
//! fusing features with downsampled logits, and a point-prompt projection
//! used during promptable pretraining.
//!
//! Binarization is strict `logit > 0` everywhere; a pixel at exactly 0 is
//! background.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::encoder::EncoderConfig;
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::pe::{pe1d, pe2d_at, pe2d_grid};
use crate::rng::Rng;
use crate::tensor::Tensor;

struct LinearIds {
    w: ParamId,
    b: ParamId,
}

/// Cross-attention projection set. Key projections carry no bias (softmax
/// cancels a constant key shift); value/out biases are per-use-site.
struct CaIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

struct DecRound {
    t2f: CaIds,
    f2t: CaIds,
}

/// Handle to the frozen segmentation-core parameters.
pub struct SamParams {
    /// Decoder token width.
    pub d_dec: usize,
    /// Channels of the finest-level feature map this core consumes.
    pub c_feat: usize,
    /// Finest-level map height.
    pub h: usize,
    /// Finest-level map width.
    pub w: usize,
    mem_q: LinearIds,
    mem_k: ParamId,
    mem_v: ParamId,
    mem_out: ParamId,
    in_proj: LinearIds,
    mask_token: ParamId,
    rounds: Vec<DecRound>,
    head1: LinearIds,
    head2: LinearIds,
    menc: LinearIds,
    point: LinearIds,
}

fn register_linear(
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

fn register_ca(store: &mut ParamStore, rng: &mut Rng, prefix: &str, dq: usize, dkv: usize) -> Result<CaIds> {
    let q = register_linear(store, rng, &format!("{prefix}.q"), dq, dq)?;
    let stdk = 1.0 / libm::sqrt(dkv as f64);
    let wk = store.register(&format!("{prefix}.k.w"), Tensor::randn(&[dkv, dq], stdk, rng), true)?;
    let v = register_linear(store, rng, &format!("{prefix}.v"), dkv, dq)?;
    let o = register_linear(store, rng, &format!("{prefix}.out"), dq, dq)?;
    Ok(CaIds { wq: q.w, bq: q.b, wk, wv: v.w, bv: v.b, wo: o.w, bo: o.b })
}

fn ca_from_store(store: &ParamStore, prefix: &str) -> Result<CaIds> {
    Ok(CaIds {
        wq: store.id(&format!("{prefix}.q.w"))?,
        bq: store.id(&format!("{prefix}.q.b"))?,
        wk: store.id(&format!("{prefix}.k.w"))?,
        wv: store.id(&format!("{prefix}.v.w"))?,
        bv: store.id(&format!("{prefix}.v.b"))?,
        wo: store.id(&format!("{prefix}.out.w"))?,
        bo: store.id(&format!("{prefix}.out.b"))?,
    })
}

fn linear_from_store(store: &ParamStore, prefix: &str) -> Result<LinearIds> {
    Ok(LinearIds { w: store.id(&format!("{prefix}.w"))?, b: store.id(&format!("{prefix}.b"))? })
}

/// Number of two-way attention rounds in the decoder.
pub const DECODER_ROUNDS: usize = 2;

impl SamParams {
    /// Register fresh parameters (trainable; they are frozen after the
    /// promptable-pretraining stage).
    pub fn register(
        store: &mut ParamStore,
        enc: &EncoderConfig,
        d_dec: usize,
        rng: &mut Rng,
    ) -> Result<SamParams> {
        let c = enc.level_c(0);
        let (h, w) = (enc.level_h(0), enc.level_w(0));
        if d_dec % 4 != 0 {
            return Err(CoreError::InvalidArgument {
                op: "SamParams",
                detail: format!("decoder width must suit 2-D codes (multiple of 4), got {d_dec}"),
            });
        }
        let mem_q = register_linear(store, rng, "sam.mem.q", c, c)?;
        let stdc = 1.0 / libm::sqrt(c as f64);
        // Key/value/out projections of memory attention are bias-free so a
        // zero-valued memory entry contributes exactly nothing.
        let mem_k = store.register("sam.mem.k.w", Tensor::randn(&[c, c], stdc, rng), true)?;
        let mem_v = store.register("sam.mem.v.w", Tensor::randn(&[c, c], stdc, rng), true)?;
        let mem_out = store.register("sam.mem.out.w", Tensor::randn(&[c, c], stdc, rng), true)?;
        let in_proj = register_linear(store, rng, "sam.dec.in_proj", c, d_dec)?;
        let mask_token =
            store.register("sam.dec.mask_token", Tensor::randn(&[1, d_dec], 0.5, rng), true)?;
        let mut rounds = Vec::new();
        for r in 0..DECODER_ROUNDS {
            rounds.push(DecRound {
                t2f: register_ca(store, rng, &format!("sam.dec.round{r}.t2f"), d_dec, d_dec)?,
                f2t: register_ca(store, rng, &format!("sam.dec.round{r}.f2t"), d_dec, d_dec)?,
            });
        }
        let head1 = register_linear(store, rng, "sam.dec.head.l1", d_dec, d_dec)?;
        let head2 = register_linear(store, rng, "sam.dec.head.l2", d_dec, d_dec)?;
        let menc = register_linear(store, rng, "sam.menc", c + 1, c)?;
        let point = register_linear(store, rng, "sam.point", d_dec, d_dec)?;
        Ok(SamParams {
            d_dec,
            c_feat: c,
            h,
            w,
            mem_q,
            mem_k,
            mem_v,
            mem_out,
            in_proj,
            mask_token,
            rounds,
            head1,
            head2,
            menc,
            point,
        })
    }

    /// Re-attach to parameters already in a store.
    pub fn from_store(store: &ParamStore, enc: &EncoderConfig, d_dec: usize) -> Result<SamParams> {
        let c = enc.level_c(0);
        let mut rounds = Vec::new();
        for r in 0..DECODER_ROUNDS {
            rounds.push(DecRound {
                t2f: ca_from_store(store, &format!("sam.dec.round{r}.t2f"))?,
                f2t: ca_from_store(store, &format!("sam.dec.round{r}.f2t"))?,
            });
        }
        Ok(SamParams {
            d_dec,
            c_feat: c,
            h: enc.level_h(0),
            w: enc.level_w(0),
            mem_q: linear_from_store(store, "sam.mem.q")?,
            mem_k: store.id("sam.mem.k.w")?,
            mem_v: store.id("sam.mem.v.w")?,
            mem_out: store.id("sam.mem.out.w")?,
            in_proj: linear_from_store(store, "sam.dec.in_proj")?,
            mask_token: store.id("sam.dec.mask_token")?,
            rounds,
            head1: linear_from_store(store, "sam.dec.head.l1")?,
            head2: linear_from_store(store, "sam.dec.head.l2")?,
            menc: linear_from_store(store, "sam.menc")?,
            point: linear_from_store(store, "sam.point")?,
        })
    }

    /// Checkpoint namespace of the decoder's first token→feature
    /// cross-attention (the weights the conditional detector copies).
    pub fn t2f_round0_prefix() -> &'static str {
        "sam.dec.round0.t2f"
    }

    fn check_feat(&self, g: &Graph, f: Var, op: &'static str) -> Result<()> {
        let v = g.val(f);
        if v.rows() != self.h * self.w || v.cols() != self.c_feat {
            return Err(CoreError::ShapeMismatch {
                op,
                detail: format!(
                    "features [{}, {}] vs configured {}x{}x{}",
                    v.rows(),
                    v.cols(),
                    self.h,
                    self.w,
                    self.c_feat
                ),
            });
        }
        Ok(())
    }

    /// Condition frame features on the memory bank: identity on an empty
    /// bank, otherwise a residual cross-attention over all entries, each
    /// key carrying a temporal code by recency rank (0 = oldest present).
    pub fn memory_attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f: Var,
        entries: &[Var],
    ) -> Result<Var> {
        self.check_feat(g, f, "memory_attention")?;
        if entries.is_empty() {
            return Ok(f);
        }
        let mut keyed = Vec::with_capacity(entries.len());
        for (rank, &e) in entries.iter().enumerate() {
            self.check_feat(g, e, "memory_attention")?;
            let code = g.leaf(pe1d(rank, self.c_feat)?)?;
            keyed.push(g.add_row(e, code)?);
        }
        let kcat = if keyed.len() == 1 { keyed[0] } else { g.concat(&keyed, 0)? };
        let vcat = if entries.len() == 1 { entries[0] } else { g.concat(entries, 0)? };
        let wq = g.param(store, self.mem_q.w)?;
        let bq = g.param(store, self.mem_q.b)?;
        let q = g.linear(f, wq, Some(bq))?;
        let wk = g.param(store, self.mem_k)?;
        let k = g.linear(kcat, wk, None)?;
        let wv = g.param(store, self.mem_v)?;
        let v = g.linear(vcat, wv, None)?;
        let att = g.attention(q, k, v)?;
        let wo = g.param(store, self.mem_out)?;
        let o = g.linear(att, wo, None)?;
        g.add(f, o)
    }

    fn cross_attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ids: &CaIds,
        queries: Var,
        keys: Var,
    ) -> Result<Var> {
        let wq = g.param(store, ids.wq)?;
        let bq = g.param(store, ids.bq)?;
        let q = g.linear(queries, wq, Some(bq))?;
        let wk = g.param(store, ids.wk)?;
        let k = g.linear(keys, wk, None)?;
        let wv = g.param(store, ids.wv)?;
        let bv = g.param(store, ids.bv)?;
        let v = g.linear(keys, wv, Some(bv))?;
        let a = g.attention(q, k, v)?;
        let wo = g.param(store, ids.wo)?;
        let bo = g.param(store, ids.bo)?;
        let o = g.linear(a, wo, Some(bo))?;
        let res = g.add(queries, o)?;
        g.layer_norm(res)
    }

    /// Lift raw features into decoder token width (no positional codes).
    pub fn project_features(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        self.check_feat(g, features, "project_features")?;
        let wp = g.param(store, self.in_proj.w)?;
        let bp = g.param(store, self.in_proj.b)?;
        g.linear(features, wp, Some(bp))
    }

    /// Decode a mask from features and a prompt token. Returns the final
    /// mask-token state `τ` (`[1, d_dec]`) and logits at input resolution
    /// (`[2h, 2w]`, one 2× bilinear upsample above the feature map).
    pub fn mask_decode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: Var,
        rho: Var,
    ) -> Result<(Var, Var)> {
        let rv = g.val(rho);
        if rv.rows() != 1 || rv.cols() != self.d_dec {
            return Err(CoreError::ShapeMismatch {
                op: "mask_decode",
                detail: format!("prompt [{}, {}] vs width {}", rv.rows(), rv.cols(), self.d_dec),
            });
        }
        let mut fe = self.project_features(g, store, features)?;
        let grid = g.leaf(pe2d_grid(self.h, self.w, self.d_dec)?)?;
        fe = g.add(fe, grid)?;
        let mt = g.param(store, self.mask_token)?;
        let mut tok = g.concat(&[rho, mt], 0)?;
        for round in &self.rounds {
            tok = self.cross_attend(g, store, &round.t2f, tok, fe)?;
            fe = self.cross_attend(g, store, &round.f2t, fe, tok)?;
        }
        let tau = g.row(tok, 1)?;
        let w1 = g.param(store, self.head1.w)?;
        let b1 = g.param(store, self.head1.b)?;
        let mut hy = g.linear(tau, w1, Some(b1))?;
        hy = g.gelu(hy)?;
        let w2 = g.param(store, self.head2.w)?;
        let b2 = g.param(store, self.head2.b)?;
        hy = g.linear(hy, w2, Some(b2))?;
        let lr = g.matmul_nt(fe, hy)?;
        let lr2 = g.reshape(lr, &[self.h, self.w])?;
        let logits = g.bilinear_up2x(lr2)?;
        Ok((tau, logits))
    }

    /// Fuse features with area-mean-downsampled logits into a bounded
    /// memory map (`tanh` squashed), same resolution and width as features.
    pub fn memory_encode(&self, g: &mut Graph, store: &ParamStore, f: Var, logits: Var) -> Result<Var> {
        self.check_feat(g, f, "memory_encode")?;
        let lv = g.val(logits);
        if lv.rank() != 2 || lv.rows() % self.h != 0 || lv.cols() % self.w != 0 {
            return Err(CoreError::ShapeMismatch {
                op: "memory_encode",
                detail: format!("logits {:?} not a multiple of {}x{}", lv.shape(), self.h, self.w),
            });
        }
        let factor = lv.rows() / self.h;
        let ds = if factor == 1 { logits } else { g.avg_pool(logits, factor)? };
        let col = g.reshape(ds, &[self.h * self.w, 1])?;
        let cat = g.concat(&[f, col], 1)?;
        let wm = g.param(store, self.menc.w)?;
        let bm = g.param(store, self.menc.b)?;
        let y = g.linear(cat, wm, Some(bm))?;
        g.tanh(y)
    }

    /// Project a sinusoidal code of a point (input-resolution coordinates)
    /// into prompt space — the conditioning used by promptable pretraining.
    pub fn point_prompt(&self, g: &mut Graph, store: &ParamStore, ci: f64, cj: f64) -> Result<Var> {
        let code = g.leaf(pe2d_at(ci, cj, self.d_dec)?)?;
        let w = g.param(store, self.point.w)?;
        let b = g.param(store, self.point.b)?;
        g.linear(code, w, Some(b))
    }
}

/// One encoded past prediction.
#[derive(Debug, Clone)]
pub struct MemoryEntry {
    /// Encoded map at the finest feature resolution, `[H·W, C]`.
    pub map: Tensor,
    /// Source frame index within the video.
    pub frame: usize,
}

/// Bounded FIFO of memory entries; cleared between videos.
#[derive(Debug)]
pub struct MemoryBank {
    cap: usize,
    entries: VecDeque<MemoryEntry>,
}

/// Default bank capacity: the smallest size exhibiting multi-frame context.
pub const BANK_CAPACITY: usize = 4;

impl MemoryBank {
    /// An empty bank with capacity `cap ≥ 1`.
    pub fn new(cap: usize) -> Result<MemoryBank> {
        if cap == 0 {
            return Err(CoreError::InvalidArgument {
                op: "MemoryBank",
                detail: String::from("capacity must be positive"),
            });
        }
        Ok(MemoryBank { cap, entries: VecDeque::new() })
    }

    /// Append an entry, evicting the oldest beyond capacity. Frame indices
    /// must be strictly increasing within a video.
    pub fn push(&mut self, entry: MemoryEntry) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if entry.frame <= last.frame {
                return Err(CoreError::OutOfOrder {
                    detail: format!("frame {} after frame {}", entry.frame, last.frame),
                });
            }
        }
        if !entry.map.all_finite() {
            return Err(CoreError::NonFinite { op: "MemoryBank::push" });
        }
        self.entries.push_back(entry);
        while self.entries.len() > self.cap {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Drop all entries (video boundary).
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Entries oldest-first.
    pub fn iter(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    /// Current number of entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when no entries are stored.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Configured capacity `K`.
    pub fn capacity(&self) -> usize {
        self.cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Mask;

    fn enc_cfg() -> EncoderConfig {
        EncoderConfig {
            input_h: 16,
            input_w: 16,
            input_c: 3,
            level_channels: alloc::vec![8, 16],
            level_depths: alloc::vec![1, 1],
            c_t: 8,
            vocab: 10,
        }
    }

    fn setup(seed: u64) -> (ParamStore, SamParams) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let sam = SamParams::register(&mut store, &enc_cfg(), 8, &mut rng).unwrap();
        (store, sam)
    }

    #[test]
    fn empty_bank_memory_attention_is_identity() {
        let (store, sam) = setup(1);
        let mut g = Graph::new();
        let mut rng = Rng::new(2);
        let f = g.leaf(Tensor::randn(&[64, 8], 1.0, &mut rng)).unwrap();
        let out = sam.memory_attention(&mut g, &store, f, &[]).unwrap();
        assert_eq!(g.val(out).data(), g.val(f).data());
    }

    #[test]
    fn zero_entry_with_zero_value_projection_is_identity() {
        let (mut store, sam) = setup(3);
        store.set_value(sam.mem_v, Tensor::zeros(&[8, 8])).unwrap();
        let mut g = Graph::new();
        let mut rng = Rng::new(4);
        let f = g.leaf(Tensor::randn(&[64, 8], 1.0, &mut rng)).unwrap();
        let z = g.leaf(Tensor::zeros(&[64, 8])).unwrap();
        let out = sam.memory_attention(&mut g, &store, f, &[z]).unwrap();
        for (a, b) in g.val(out).data().iter().zip(g.val(f).data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn memory_attention_matches_loop_oracle() {
        let (store, sam) = setup(5);
        let mut rng = Rng::new(6);
        let f = Tensor::randn(&[64, 8], 1.0, &mut rng);
        let e0 = Tensor::randn(&[64, 8], 0.8, &mut rng);
        let e1 = Tensor::randn(&[64, 8], 0.8, &mut rng);
        let mut g = Graph::new();
        let fv = g.leaf(f.clone()).unwrap();
        let ev0 = g.leaf(e0.clone()).unwrap();
        let ev1 = g.leaf(e1.clone()).unwrap();
        let out = sam.memory_attention(&mut g, &store, fv, &[ev0, ev1]).unwrap();

        // Loop oracle.
        let wq = store.value(sam.mem_q.w);
        let bq = store.value(sam.mem_q.b);
        let wk = store.value(sam.mem_k);
        let wv = store.value(sam.mem_v);
        let wo = store.value(sam.mem_out);
        let pe0 = pe1d(0, 8).unwrap();
        let pe1_ = pe1d(1, 8).unwrap();
        let mut keys = Vec::new();
        let mut vals = Vec::new();
        for (e, pe) in [(&e0, &pe0), (&e1, &pe1_)] {
            for r in 0..64 {
                let krow: Vec<f64> = (0..8)
                    .map(|c| {
                        (0..8)
                            .map(|k| (e.at2(r, k) + pe.at2(0, k)) * wk.at2(k, c))
                            .sum::<f64>()
                    })
                    .collect();
                let vrow: Vec<f64> = (0..8)
                    .map(|c| (0..8).map(|k| e.at2(r, k) * wv.at2(k, c)).sum::<f64>())
                    .collect();
                keys.push(krow);
                vals.push(vrow);
            }
        }
        for r in 0..64 {
            let q: Vec<f64> = (0..8)
                .map(|c| (0..8).map(|k| f.at2(r, k) * wq.at2(k, c)).sum::<f64>() + bq.at2(0, c))
                .collect();
            let mut scores = Vec::new();
            for key in &keys {
                let dot: f64 = q.iter().zip(key).map(|(a, b)| a * b).sum();
                scores.push(dot / libm::sqrt(8.0));
            }
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| libm::exp(s - mx)).collect();
            let z: f64 = exps.iter().sum();
            let mut read = alloc::vec![0.0; 8];
            for (i, val) in vals.iter().enumerate() {
                for c in 0..8 {
                    read[c] += exps[i] / z * val[c];
                }
            }
            for c in 0..8 {
                let o: f64 = (0..8).map(|k| read[k] * wo.at2(k, c)).sum();
                let want = f.at2(r, c) + o;
                let got = g.val(out).at2(r, c);
                assert!((got - want).abs() < 1e-12, "row {r} col {c}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn logit_zero_is_background() {
        let z = Tensor::zeros(&[4, 4]);
        let m = Mask::from_logits(&z).unwrap();
        assert!(m.is_blank(), "threshold is strictly greater-than");
    }

    #[test]
    fn different_prompts_give_different_logits() {
        let (store, sam) = setup(7);
        let mut g = Graph::new();
        let mut rng = Rng::new(8);
        let f = g.leaf(Tensor::randn(&[64, 8], 1.0, &mut rng)).unwrap();
        let r1 = g.leaf(Tensor::randn(&[1, 8], 1.0, &mut rng)).unwrap();
        let r2 = g.leaf(Tensor::randn(&[1, 8], 1.0, &mut rng)).unwrap();
        let (_, l1) = sam.mask_decode(&mut g, &store, f, r1).unwrap();
        let (_, l2) = sam.mask_decode(&mut g, &store, f, r2).unwrap();
        assert_ne!(g.val(l1).data(), g.val(l2).data());
        assert_eq!(g.val(l1).shape(), &[16, 16], "2x upsample of an 8x8 map");
    }

    #[test]
    fn decoder_gradient_check() {
        use crate::gradcheck::grad_check;
        let (mut store, sam) = setup(9);
        let mut rng = Rng::new(10);
        let f_data = Tensor::randn(&[64, 8], 0.7, &mut rng);
        let rho_data = Tensor::randn(&[1, 8], 0.7, &mut rng);
        let ids: Vec<ParamId> = store
            .iter()
            .filter(|(_, n, _, _)| n.starts_with("sam.dec."))
            .map(|(id, _, _, _)| id)
            .collect();
        let report = grad_check(
            &mut store,
            &ids,
            |st, g| {
                let f = g.leaf(f_data.clone())?;
                let rho = g.leaf(rho_data.clone())?;
                let (tau, logits) = sam.mask_decode(g, st, f, rho)?;
                let st_ = g.sum_all(tau)?;
                let st_ = g.mul_scalar(st_, 0.05)?;
                let sl = g.mean_all(logits)?;
                g.add(st_, sl)
            },
            1e-5,
            4,
            11,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "max rel err {} at {}", report.max_rel_err, report.worst.0);
    }

    #[test]
    fn memory_encode_is_bounded_and_deterministic() {
        let (store, sam) = setup(12);
        let mut rng = Rng::new(13);
        let f_data = Tensor::randn(&[64, 8], 2.0, &mut rng);
        let l_data = Tensor::randn(&[16, 16], 5.0, &mut rng);
        let run = || {
            let mut g = Graph::new();
            let f = g.leaf(f_data.clone()).unwrap();
            let l = g.leaf(l_data.clone()).unwrap();
            let e = sam.memory_encode(&mut g, &store, f, l).unwrap();
            g.val(e).clone()
        };
        let a = run();
        let b = run();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| v.abs() < 1.0));
        assert_eq!(a.shape(), &[64, 8]);
    }

    #[test]
    fn bank_fifo_law() {
        let mut bank = MemoryBank::new(3).unwrap();
        for t in 0..4 {
            bank.push(MemoryEntry { map: Tensor::full(&[2, 2], t as f64), frame: t }).unwrap();
        }
        assert_eq!(bank.len(), 3);
        let frames: Vec<usize> = bank.iter().map(|e| e.frame).collect();
        assert_eq!(frames, [1, 2, 3], "oldest evicted, newest present");
        bank.clear();
        assert!(bank.is_empty());
    }

    #[test]
    fn bank_rejects_out_of_order_frames() {
        let mut bank = MemoryBank::new(2).unwrap();
        bank.push(MemoryEntry { map: Tensor::zeros(&[2, 2]), frame: 5 }).unwrap();
        let bad = bank.push(MemoryEntry { map: Tensor::zeros(&[2, 2]), frame: 5 });
        assert!(bad.is_err());
    }
}
