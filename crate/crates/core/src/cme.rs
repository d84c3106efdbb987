//! Conditional memory enhancement: a memory-less readout token summarizing
//! what in the *current* frame matches the prompt, a learned detector that
//! decides whether that summary reveals a candidate the tracked memory has
//! missed, a mask-fusion rule that lets such a candidate bias future memory,
//! and the self-labelling rule that supervises the detector.
//!
//! The readout reuses the mask decoder's first token→feature cross-attention
//! weights as frozen copies — it asks the same question the decoder asks,
//! but of the raw (memory-free) frame.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::metrics::Mask;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::segmenter::SamParams;
use crate::tensor::Tensor;

/// Fusion triggers strictly above this probability; exactly 0.5 does not.
pub const DETECT_THRESHOLD: f64 = 0.5;

/// Default weight of the memory-less candidate inside fused memory.
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Handle to detector parameters (`cme.*`). The readout copies under
/// `cme.readout.*` are registered non-trainable and must stay bit-equal to
/// the decoder weights they mirror.
pub struct CmeParams {
    /// Token width (matches the decoder).
    pub d_dec: usize,
    dec_token: ParamId,
    dq_w: ParamId,
    dq_b: ParamId,
    dk_w: ParamId,
    dv_w: ParamId,
    dv_b: ParamId,
    do_w: ParamId,
    do_b: ParamId,
    phi_w: ParamId,
    phi_b: ParamId,
    rq_w: ParamId,
    rq_b: ParamId,
    rk_w: ParamId,
    rv_w: ParamId,
    rv_b: ParamId,
}

/// The decoder weight names mirrored by the readout, in a fixed order:
/// query/key/value projections of the first token→feature cross-attention.
const MIRRORED: [(&str, &str); 5] = [
    ("cme.readout.q.w", "sam.dec.round0.t2f.q.w"),
    ("cme.readout.q.b", "sam.dec.round0.t2f.q.b"),
    ("cme.readout.k.w", "sam.dec.round0.t2f.k.w"),
    ("cme.readout.v.w", "sam.dec.round0.t2f.v.w"),
    ("cme.readout.v.b", "sam.dec.round0.t2f.v.b"),
];

impl CmeParams {
    /// Register detector parameters. The decision head `φ` starts at zero so
    /// the detector outputs exactly 0.5 — never triggering — until trained.
    /// The readout weights are copied (frozen) from the decoder, which must
    /// already be registered in `store`.
    pub fn register(store: &mut ParamStore, d_dec: usize, rng: &mut Rng) -> Result<CmeParams> {
        let std = 1.0 / libm::sqrt(d_dec as f64);
        let dec_token =
            store.register("cme.dec_token", Tensor::randn(&[1, d_dec], 0.5, rng), true)?;
        let dq_w =
            store.register("cme.decide.q.w", Tensor::randn(&[d_dec, d_dec], std, rng), true)?;
        let dq_b = store.register("cme.decide.q.b", Tensor::zeros(&[1, d_dec]), true)?;
        let dk_w =
            store.register("cme.decide.k.w", Tensor::randn(&[d_dec, d_dec], std, rng), true)?;
        let dv_w =
            store.register("cme.decide.v.w", Tensor::randn(&[d_dec, d_dec], std, rng), true)?;
        let dv_b = store.register("cme.decide.v.b", Tensor::zeros(&[1, d_dec]), true)?;
        let do_w =
            store.register("cme.decide.out.w", Tensor::randn(&[d_dec, d_dec], std, rng), true)?;
        let do_b = store.register("cme.decide.out.b", Tensor::zeros(&[1, d_dec]), true)?;
        let phi_w = store.register("cme.phi.w", Tensor::zeros(&[d_dec, 1]), true)?;
        let phi_b = store.register("cme.phi.b", Tensor::zeros(&[1, 1]), true)?;
        for (dst, src) in MIRRORED {
            let v = store.value(store.id(src)?).clone();
            store.register(dst, v, false)?;
        }
        let params = CmeParams {
            d_dec,
            dec_token,
            dq_w,
            dq_b,
            dk_w,
            dv_w,
            dv_b,
            do_w,
            do_b,
            phi_w,
            phi_b,
            rq_w: store.id("cme.readout.q.w")?,
            rq_b: store.id("cme.readout.q.b")?,
            rk_w: store.id("cme.readout.k.w")?,
            rv_w: store.id("cme.readout.v.w")?,
            rv_b: store.id("cme.readout.v.b")?,
        };
        Ok(params)
    }

    /// Re-attach to parameters already in a store.
    pub fn from_store(store: &ParamStore, d_dec: usize) -> Result<CmeParams> {
        Ok(CmeParams {
            d_dec,
            dec_token: store.id("cme.dec_token")?,
            dq_w: store.id("cme.decide.q.w")?,
            dq_b: store.id("cme.decide.q.b")?,
            dk_w: store.id("cme.decide.k.w")?,
            dv_w: store.id("cme.decide.v.w")?,
            dv_b: store.id("cme.decide.v.b")?,
            do_w: store.id("cme.decide.out.w")?,
            do_b: store.id("cme.decide.out.b")?,
            phi_w: store.id("cme.phi.w")?,
            phi_b: store.id("cme.phi.b")?,
            rq_w: store.id("cme.readout.q.w")?,
            rq_b: store.id("cme.readout.q.b")?,
            rk_w: store.id("cme.readout.k.w")?,
            rv_w: store.id("cme.readout.v.w")?,
            rv_b: store.id("cme.readout.v.b")?,
        })
    }

    /// Re-copy the decoder weights into the readout mirror. Call after any
    /// stage that could have updated the decoder.
    pub fn refresh_readout(&self, store: &mut ParamStore) -> Result<()> {
        for (dst, src) in MIRRORED {
            let v = store.value(store.id(src)?).clone();
            store.set_value(store.id(dst)?, v)?;
        }
        Ok(())
    }

    /// True iff every mirrored readout tensor is bit-equal to its decoder
    /// source.
    pub fn readout_matches_decoder(&self, store: &ParamStore) -> Result<bool> {
        for (dst, src) in MIRRORED {
            let a = store.value(store.id(dst)?);
            let b = store.value(store.id(src)?);
            if a.shape() != b.shape() {
                return Ok(false);
            }
            if a.data().iter().zip(b.data()).any(|(x, y)| x.to_bits() != y.to_bits()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Memory-less readout: the prompt queries the *raw* frame features once
    /// through the frozen decoder-mirror projections (keys carry no spatial
    /// codes, so a spatially constant frame yields a prompt-independent
    /// summary). Returns `τ_l` of shape `[1, d_dec]`.
    pub fn memoryless_token(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        sam: &SamParams,
        features: Var,
        rho: Var,
    ) -> Result<Var> {
        let rv = g.val(rho);
        if rv.rows() != 1 || rv.cols() != self.d_dec {
            return Err(CoreError::ShapeMismatch {
                op: "memoryless_token",
                detail: format!("prompt [{}, {}] vs width {}", rv.rows(), rv.cols(), self.d_dec),
            });
        }
        let base = sam.project_features(g, store, features)?;
        let wq = g.param(store, self.rq_w)?;
        let bq = g.param(store, self.rq_b)?;
        let q = g.linear(rho, wq, Some(bq))?;
        let wk = g.param(store, self.rk_w)?;
        let k = g.linear(base, wk, None)?;
        let wv = g.param(store, self.rv_w)?;
        let bv = g.param(store, self.rv_b)?;
        let v = g.linear(base, wv, Some(bv))?;
        g.attention(q, k, v)
    }

    /// Decision pass: self-attention over the ordered triple
    /// `[[DEC], τ_m, τ_l]`, then a linear head on the updated decision row.
    /// Returns the raw detection logit (`[1,1]` variable, differentiable)
    /// and its probability.
    pub fn detect(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tau_m: Var,
        tau_l: Var,
    ) -> Result<(Var, f64)> {
        for (name, v) in [("tau_m", tau_m), ("tau_l", tau_l)] {
            let t = g.val(v);
            if t.rows() != 1 || t.cols() != self.d_dec {
                return Err(CoreError::ShapeMismatch {
                    op: "detect",
                    detail: format!("{name} [{}, {}] vs width {}", t.rows(), t.cols(), self.d_dec),
                });
            }
        }
        let dec = g.param(store, self.dec_token)?;
        let x = g.concat(&[dec, tau_m, tau_l], 0)?;
        let wq = g.param(store, self.dq_w)?;
        let bq = g.param(store, self.dq_b)?;
        let q = g.linear(x, wq, Some(bq))?;
        let wk = g.param(store, self.dk_w)?;
        let k = g.linear(x, wk, None)?;
        let wv = g.param(store, self.dv_w)?;
        let bv = g.param(store, self.dv_b)?;
        let v = g.linear(x, wv, Some(bv))?;
        let a = g.attention(q, k, v)?;
        let wo = g.param(store, self.do_w)?;
        let bo = g.param(store, self.do_b)?;
        let o = g.linear(a, wo, Some(bo))?;
        let z = g.add(x, o)?;
        let z_dec = g.row(z, 0)?;
        let wp = g.param(store, self.phi_w)?;
        let bp = g.param(store, self.phi_b)?;
        let logit = g.linear(z_dec, wp, Some(bp))?;
        let zval = g.val(logit).at2(0, 0);
        let p = 1.0 / (1.0 + libm::exp(-zval));
        Ok((logit, p))
    }

    /// Identifiers of the trainable detector parameters (readout mirrors
    /// excluded — they are frozen).
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        alloc::vec![
            self.dec_token,
            self.dq_w,
            self.dq_b,
            self.dk_w,
            self.dv_w,
            self.dv_b,
            self.do_w,
            self.do_b,
            self.phi_w,
            self.phi_b,
        ]
    }
}

/// Strict trigger rule: fuse only when the detector is more than half sure.
pub fn trigger(p_detect: f64) -> bool {
    p_detect > DETECT_THRESHOLD
}

/// Fuse tracked logits with a memory-less candidate: where the candidate is
/// strictly positive its (λ-scaled) logits replace the tracked ones;
/// elsewhere the tracked logits pass through. The result feeds the memory
/// encoder only — the emitted mask for the frame stays `P_m > 0`.
pub fn fuse(p_m: &Tensor, p_l: &Tensor, lambda: f64) -> Result<Tensor> {
    if p_m.shape() != p_l.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "fuse",
            detail: format!("{:?} vs {:?}", p_m.shape(), p_l.shape()),
        });
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(CoreError::InvalidArgument {
            op: "fuse",
            detail: format!("lambda must lie in (0, 1], got {lambda}"),
        });
    }
    let mut out = p_m.clone();
    for (o, &l) in out.data_mut().iter_mut().zip(p_l.data()) {
        if l > 0.0 {
            *o = lambda * l;
        }
    }
    Ok(out)
}

/// Detector label for one frame: 1 iff the memory-less mask found something
/// (`Y_l` nonempty) entirely outside the tracked mask (`Y_l ∩ Y_m = ∅`).
pub fn self_label(y_m: &Mask, y_l: &Mask) -> Result<u8> {
    if !y_m.same_shape(y_l) {
        return Err(CoreError::ShapeMismatch {
            op: "self_label",
            detail: format!(
                "{}x{} vs {}x{}",
                y_m.h(),
                y_m.w(),
                y_l.h(),
                y_l.w()
            ),
        });
    }
    Ok(if !y_l.is_blank() && !y_l.intersects(y_m) { 1 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::gradcheck::grad_check;

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

    fn setup(seed: u64) -> (ParamStore, SamParams, CmeParams) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let sam = SamParams::register(&mut store, &enc_cfg(), 8, &mut rng).unwrap();
        let cme = CmeParams::register(&mut store, 8, &mut rng).unwrap();
        (store, sam, cme)
    }

    #[test]
    fn constant_frame_gives_prompt_independent_value_readout() {
        let (store, sam, cme) = setup(21);
        let mut rng = Rng::new(22);
        let row = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let mut f = Tensor::zeros(&[64, 8]);
        for r in 0..64 {
            for c in 0..8 {
                f.set2(r, c, row.at2(0, c));
            }
        }
        let mut g = Graph::new();
        let fv = g.leaf(f).unwrap();
        let r1 = g.leaf(Tensor::randn(&[1, 8], 1.0, &mut rng)).unwrap();
        let r2 = g.leaf(Tensor::randn(&[1, 8], 1.0, &mut rng)).unwrap();
        let t1 = cme.memoryless_token(&mut g, &store, &sam, fv, r1).unwrap();
        let t2 = cme.memoryless_token(&mut g, &store, &sam, fv, r2).unwrap();

        // Oracle: the value projection of the (single) projected feature row.
        let wp = store.value(store.id("sam.dec.in_proj.w").unwrap());
        let bp = store.value(store.id("sam.dec.in_proj.b").unwrap());
        let wv = store.value(cme.rv_w);
        let bv = store.value(cme.rv_b);
        let base: Vec<f64> = (0..8)
            .map(|c| (0..8).map(|k| row.at2(0, k) * wp.at2(k, c)).sum::<f64>() + bp.at2(0, c))
            .collect();
        for c in 0..8 {
            let want: f64 =
                (0..8).map(|k| base[k] * wv.at2(k, c)).sum::<f64>() + bv.at2(0, c);
            assert!((g.val(t1).at2(0, c) - want).abs() < 1e-12);
            assert!((g.val(t2).at2(0, c) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn memoryless_token_matches_loop_oracle() {
        let (store, sam, cme) = setup(23);
        let mut rng = Rng::new(24);
        let f = Tensor::randn(&[64, 8], 0.9, &mut rng);
        let rho = Tensor::randn(&[1, 8], 0.9, &mut rng);
        let mut g = Graph::new();
        let fv = g.leaf(f.clone()).unwrap();
        let rv = g.leaf(rho.clone()).unwrap();
        let tok = cme.memoryless_token(&mut g, &store, &sam, fv, rv).unwrap();

        let wp = store.value(store.id("sam.dec.in_proj.w").unwrap());
        let bp = store.value(store.id("sam.dec.in_proj.b").unwrap());
        let wq = store.value(cme.rq_w);
        let bq = store.value(cme.rq_b);
        let wk = store.value(cme.rk_w);
        let wv = store.value(cme.rv_w);
        let bv = store.value(cme.rv_b);
        let q: Vec<f64> = (0..8)
            .map(|c| {
                (0..8).map(|k| rho.at2(0, k) * wq.at2(k, c)).sum::<f64>() + bq.at2(0, c)
            })
            .collect();
        let mut keys = Vec::new();
        let mut vals = Vec::new();
        for r in 0..64 {
            let base: Vec<f64> = (0..8)
                .map(|c| (0..8).map(|k| f.at2(r, k) * wp.at2(k, c)).sum::<f64>() + bp.at2(0, c))
                .collect();
            keys.push(
                (0..8)
                    .map(|c| (0..8).map(|k| base[k] * wk.at2(k, c)).sum::<f64>())
                    .collect::<Vec<f64>>(),
            );
            vals.push(
                (0..8)
                    .map(|c| (0..8).map(|k| base[k] * wv.at2(k, c)).sum::<f64>() + bv.at2(0, c))
                    .collect::<Vec<f64>>(),
            );
        }
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / libm::sqrt(8.0))
            .collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| libm::exp(s - mx)).collect();
        let z: f64 = exps.iter().sum();
        for c in 0..8 {
            let want: f64 = (0..64).map(|i| exps[i] / z * vals[i][c]).sum();
            let got = g.val(tok).at2(0, c);
            assert!((got - want).abs() < 1e-12, "col {c}: {got} vs {want}");
        }
    }

    #[test]
    fn readout_mirror_is_frozen_and_refreshable() {
        let (mut store, _sam, cme) = setup(25);
        for (dst, _) in MIRRORED {
            let id = store.id(dst).unwrap();
            let trainable = store
                .iter()
                .find(|(pid, _, _, _)| *pid == id)
                .map(|(_, _, _, t)| t)
                .unwrap();
            assert!(!trainable, "{dst} must be frozen");
        }
        assert!(cme.readout_matches_decoder(&store).unwrap());

        // Simulate decoder drift, then refresh restores bit-equality.
        let src = store.id("sam.dec.round0.t2f.q.w").unwrap();
        let mut v = store.value(src).clone();
        v.data_mut()[0] += 0.25;
        store.set_value(src, v).unwrap();
        assert!(!cme.readout_matches_decoder(&store).unwrap());
        cme.refresh_readout(&mut store).unwrap();
        assert!(cme.readout_matches_decoder(&store).unwrap());
    }

    #[test]
    fn zero_head_gives_exact_half_and_no_trigger() {
        let (store, _sam, cme) = setup(26);
        let mut g = Graph::new();
        let mut rng = Rng::new(27);
        let tm = g.leaf(Tensor::randn(&[1, 8], 1.0, &mut rng)).unwrap();
        let tl = g.leaf(Tensor::randn(&[1, 8], 1.0, &mut rng)).unwrap();
        let (logit, p) = cme.detect(&mut g, &store, tm, tl).unwrap();
        assert_eq!(g.val(logit).at2(0, 0), 0.0);
        assert_eq!(p, 0.5);
        assert!(!trigger(p), "exactly 0.5 must not trigger");
        assert!(trigger(0.5 + 1e-9));
    }

    #[test]
    fn detect_gradient_check() {
        let (mut store, _sam, cme) = setup(28);
        let mut rng = Rng::new(29);
        // A zero decision head blocks every upstream gradient; randomize it
        // so the check sees real signal.
        store.set_value(cme.phi_w, Tensor::randn(&[8, 1], 0.5, &mut rng)).unwrap();
        store.set_value(cme.phi_b, Tensor::randn(&[1, 1], 0.5, &mut rng)).unwrap();
        let tm = Tensor::randn(&[1, 8], 0.8, &mut rng);
        let tl = Tensor::randn(&[1, 8], 0.8, &mut rng);
        let ids = cme.trainable_ids();
        let report = grad_check(
            &mut store,
            &ids,
            |st, g| {
                let a = g.leaf(tm.clone())?;
                let b = g.leaf(tl.clone())?;
                let (logit, _) = cme.detect(g, st, a, b)?;
                crate::loss::bce_with_logit(g, logit, 1.0)
            },
            1e-5,
            4,
            30,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "max rel err {} at {}", report.max_rel_err, report.worst.0);
    }

    #[test]
    fn fuse_matches_worked_example() {
        let mut pm = Tensor::zeros(&[2, 2]);
        pm.set2(0, 0, 1.0);
        pm.set2(0, 1, -1.0);
        pm.set2(1, 0, 2.0);
        pm.set2(1, 1, 0.0);
        let mut pl = Tensor::zeros(&[2, 2]);
        pl.set2(0, 0, -1.0);
        pl.set2(0, 1, 3.0);
        pl.set2(1, 0, -2.0);
        pl.set2(1, 1, 5.0);
        let p = fuse(&pm, &pl, 0.5).unwrap();
        assert_eq!(p.data(), &[1.0, 1.5, 2.0, 2.5]);
    }

    #[test]
    fn fuse_edge_cases() {
        let mut rng = Rng::new(31);
        let pm = Tensor::randn(&[4, 4], 1.0, &mut rng);
        let neg = Tensor::full(&[4, 4], -3.0);
        let fused = fuse(&pm, &neg, 0.5).unwrap();
        assert_eq!(fused.data(), pm.data(), "empty candidate leaves memory input unchanged");

        let pos = Tensor::full(&[4, 4], 2.0);
        let fused = fuse(&pm, &pos, 1.0).unwrap();
        assert_eq!(fused.data(), pos.data(), "full candidate at lambda 1 replaces everything");

        let a = fuse(&pm, &pos, 0.5).unwrap();
        let b = fuse(&pm, &pos, 0.5).unwrap();
        assert_eq!(a.data(), b.data(), "fixed inputs, fixed output");

        assert!(fuse(&pm, &Tensor::zeros(&[2, 2]), 0.5).is_err());
        assert!(fuse(&pm, &pos, 0.0).is_err());
        assert!(fuse(&pm, &pos, 1.5).is_err());
    }

    #[test]
    fn self_label_rule() {
        let mut yl = Mask::empty(2, 2);
        yl.set(0, 0, true);
        let mut ym = Mask::empty(2, 2);
        ym.set(1, 1, true);
        assert_eq!(self_label(&ym, &yl).unwrap(), 1, "disjoint nonempty candidate");

        let mut shared = Mask::empty(2, 2);
        shared.set(0, 0, true);
        assert_eq!(self_label(&shared, &yl).unwrap(), 0, "any shared pixel");

        let empty = Mask::empty(2, 2);
        assert_eq!(self_label(&ym, &empty).unwrap(), 0, "empty candidate guard");
        assert!(self_label(&Mask::empty(3, 3), &yl).is_err());
    }

    #[test]
    fn self_label_matches_brute_force_oracle() {
        let mut rng = Rng::new(32);
        for _ in 0..1000 {
            let mut ym = Mask::empty(4, 5);
            let mut yl = Mask::empty(4, 5);
            for i in 0..4 {
                for j in 0..5 {
                    ym.set(i, j, rng.uniform() < 0.3);
                    yl.set(i, j, rng.uniform() < 0.3);
                }
            }
            let mut any_l = false;
            let mut overlap = false;
            for i in 0..4 {
                for j in 0..5 {
                    any_l |= yl.get(i, j);
                    overlap |= yl.get(i, j) && ym.get(i, j);
                }
            }
            let want = if any_l && !overlap { 1 } else { 0 };
            assert_eq!(self_label(&ym, &yl).unwrap(), want);
        }
    }
}
