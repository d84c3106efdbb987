//! Decoder prompt construction: the contextual summary is the `[CLS]` row of
//! the final text layer, the motion summary is the mean of verb rows, and a
//! learnable three-layer MLP projects their concatenation into the decoder's
//! token width.

use alloc::format;
use alloc::vec::Vec;

use crate::encoder::TextFeatures;
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

struct LinearIds {
    w: ParamId,
    b: ParamId,
}

/// Handle to the prompt MLP parameters.
pub struct PromptHead {
    /// Text width each summary arrives at.
    pub c_t: usize,
    /// Decoder token width the prompt lands in.
    pub d_dec: usize,
    l1: LinearIds,
    l2: LinearIds,
    l3: LinearIds,
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

impl PromptHead {
    /// Register fresh (trainable) prompt parameters.
    pub fn register(store: &mut ParamStore, c_t: usize, d_dec: usize, rng: &mut Rng) -> Result<PromptHead> {
        let l1 = register_linear(store, rng, "prompt.mlp.l1", 2 * c_t, d_dec)?;
        let l2 = register_linear(store, rng, "prompt.mlp.l2", d_dec, d_dec)?;
        let l3 = register_linear(store, rng, "prompt.mlp.l3", d_dec, d_dec)?;
        Ok(PromptHead { c_t, d_dec, l1, l2, l3 })
    }

    /// Re-attach to parameters already in a store.
    pub fn from_store(store: &ParamStore, c_t: usize, d_dec: usize) -> Result<PromptHead> {
        let get = |p: &str| -> Result<LinearIds> {
            Ok(LinearIds {
                w: store.id(&format!("{p}.w"))?,
                b: store.id(&format!("{p}.b"))?,
            })
        };
        Ok(PromptHead {
            c_t,
            d_dec,
            l1: get("prompt.mlp.l1")?,
            l2: get("prompt.mlp.l2")?,
            l3: get("prompt.mlp.l3")?,
        })
    }

    /// The contextual summary: row 0 (`[CLS]`) of the final text layer.
    pub fn extract_contextual(&self, g: &mut Graph, text: &TextFeatures) -> Result<Var> {
        g.row(text.last(), 0)
    }

    /// The motion summary: arithmetic mean of final-layer rows flagged as
    /// verbs; the zero vector when the caption names no action.
    pub fn extract_motion(&self, g: &mut Graph, text: &TextFeatures) -> Result<Var> {
        let last = text.last();
        let rows = g.val(last).rows();
        let width = g.val(last).cols();
        if text.verb_flags.len() != rows {
            return Err(CoreError::ShapeMismatch {
                op: "extract_motion",
                detail: format!("{} verb flags for {} rows", text.verb_flags.len(), rows),
            });
        }
        let verbs: Vec<usize> = (0..rows).filter(|&r| text.verb_flags[r]).collect();
        if verbs.is_empty() {
            return g.leaf(Tensor::zeros(&[1, width]));
        }
        let mut idx = Vec::with_capacity(verbs.len() * width);
        for &r in &verbs {
            for c in 0..width {
                idx.push(r * width + c);
            }
        }
        let picked = g.gather(last, idx, &[verbs.len(), width])?;
        g.mean_axis(picked, 0)
    }

    /// `ρ = MLP₃(concat[E_C, E_M])`, gelu between layers.
    pub fn build_prompt(&self, g: &mut Graph, store: &ParamStore, e_c: Var, e_m: Var) -> Result<Var> {
        for (name, v) in [("E_C", e_c), ("E_M", e_m)] {
            let val = g.val(v);
            if val.rows() != 1 || val.cols() != self.c_t {
                return Err(CoreError::ShapeMismatch {
                    op: "build_prompt",
                    detail: format!("{name} is [{}, {}], want [1, {}]", val.rows(), val.cols(), self.c_t),
                });
            }
        }
        let x = g.concat(&[e_c, e_m], 1)?;
        let w1 = g.param(store, self.l1.w)?;
        let b1 = g.param(store, self.l1.b)?;
        let mut y = g.linear(x, w1, Some(b1))?;
        y = g.gelu(y)?;
        let w2 = g.param(store, self.l2.w)?;
        let b2 = g.param(store, self.l2.b)?;
        y = g.linear(y, w2, Some(b2))?;
        y = g.gelu(y)?;
        let w3 = g.param(store, self.l3.w)?;
        let b3 = g.param(store, self.l3.b)?;
        g.linear(y, w3, Some(b3))
    }

    /// Convenience: summaries + MLP in one call.
    pub fn prompt(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        text: &TextFeatures,
    ) -> Result<Var> {
        let e_c = self.extract_contextual(g, text)?;
        let e_m = self.extract_motion(g, text)?;
        self.build_prompt(g, store, e_c, e_m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderConfig};
    use crate::gradcheck::grad_check;
    use crate::synth::Lexicon;

    fn head(seed: u64) -> (ParamStore, PromptHead) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let h = PromptHead::register(&mut store, 8, 8, &mut rng).unwrap();
        (store, h)
    }

    fn fake_text(g: &mut Graph, rows: usize, width: usize, flags: Vec<bool>, seed: u64) -> TextFeatures {
        let mut rng = Rng::new(seed);
        let v = g.leaf(Tensor::randn(&[rows, width], 1.0, &mut rng)).unwrap();
        TextFeatures { layers: alloc::vec![v], verb_flags: flags }
    }

    #[test]
    fn contextual_is_row_zero() {
        let (_, h) = head(1);
        let mut g = Graph::new();
        let text = fake_text(&mut g, 4, 8, alloc::vec![false; 4], 2);
        let ec = h.extract_contextual(&mut g, &text).unwrap();
        assert_eq!(g.val(ec).shape(), &[1, 8]);
        for c in 0..8 {
            assert_eq!(g.val(ec).at2(0, c), g.val(text.last()).at2(0, c));
        }
    }

    #[test]
    fn motion_single_verb_is_that_row() {
        let (_, h) = head(3);
        let mut g = Graph::new();
        let text = fake_text(&mut g, 4, 8, alloc::vec![false, false, true, false], 4);
        let em = h.extract_motion(&mut g, &text).unwrap();
        for c in 0..8 {
            assert_eq!(g.val(em).at2(0, c), g.val(text.last()).at2(2, c));
        }
    }

    #[test]
    fn motion_no_verbs_is_zero() {
        let (_, h) = head(5);
        let mut g = Graph::new();
        let text = fake_text(&mut g, 3, 8, alloc::vec![false; 3], 6);
        let em = h.extract_motion(&mut g, &text).unwrap();
        assert!(g.val(em).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn motion_two_verbs_is_their_mean() {
        let (_, h) = head(7);
        let mut g = Graph::new();
        let text = fake_text(&mut g, 4, 8, alloc::vec![false, true, false, true], 8);
        let em = h.extract_motion(&mut g, &text).unwrap();
        for c in 0..8 {
            let want = 0.5 * (g.val(text.last()).at2(1, c) + g.val(text.last()).at2(3, c));
            assert!((g.val(em).at2(0, c) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_final_layer_gives_zero_prompt() {
        let (mut store, h) = head(9);
        store.set_value(h.l3.w, Tensor::zeros(&[8, 8])).unwrap();
        store.set_value(h.l3.b, Tensor::zeros(&[1, 8])).unwrap();
        let mut g = Graph::new();
        let mut rng = Rng::new(10);
        let ec = g.leaf(Tensor::randn(&[1, 8], 1.0, &mut rng)).unwrap();
        let em = g.leaf(Tensor::randn(&[1, 8], 1.0, &mut rng)).unwrap();
        let rho = h.build_prompt(&mut g, &store, ec, em).unwrap();
        assert!(g.val(rho).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prompt_is_deterministic() {
        let (store, h) = head(11);
        let mut rng = Rng::new(12);
        let ec_data = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let em_data = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let run = || {
            let mut g = Graph::new();
            let ec = g.leaf(ec_data.clone()).unwrap();
            let em = g.leaf(em_data.clone()).unwrap();
            let rho = h.build_prompt(&mut g, &store, ec, em).unwrap();
            g.val(rho).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn prompt_gradient_check() {
        let (mut store, h) = head(13);
        let mut rng = Rng::new(14);
        let ec_data = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let em_data = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let ids: Vec<ParamId> = store.iter().map(|(id, _, _, _)| id).collect();
        let report = grad_check(
            &mut store,
            &ids,
            |st, g| {
                let ec = g.leaf(ec_data.clone())?;
                let em = g.leaf(em_data.clone())?;
                let rho = h.build_prompt(g, st, ec, em)?;
                let s = g.sum_all(rho)?;
                g.pow_scalar(s, 2.0)
            },
            1e-5,
            6,
            15,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn different_non_cls_tokens_change_contextual_summary() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(16);
        let cfg = EncoderConfig::default();
        let enc = Encoder::register(&mut store, &cfg, &mut rng).unwrap();
        let h = PromptHead::register(&mut store, cfg.c_t, 32, &mut rng).unwrap();
        let lex = Lexicon::standard();
        let (ta, fa) = lex.tokenize("the red square moving right").unwrap();
        let (tb, fb) = lex.tokenize("the blue square moving right").unwrap();
        let mut g = Graph::new();
        let ea = enc.encode_text(&mut g, &store, &ta, &fa).unwrap();
        let ca = h.extract_contextual(&mut g, &ea).unwrap();
        let mut g2 = Graph::new();
        let eb = enc.encode_text(&mut g2, &store, &tb, &fb).unwrap();
        let cb = h.extract_contextual(&mut g2, &eb).unwrap();
        assert_ne!(g.val(ca).data(), g2.val(cb).data(), "text attention must mix rows into [CLS]");
    }
}
