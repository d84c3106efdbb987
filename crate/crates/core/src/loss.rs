//! Segmentation and detection losses, built as graph composites so the
//! same code path serves training and gradient checking.
//!
//! Numerical hygiene: nothing here ever takes `ln` of a probability.
//! Cross-entropy terms are assembled from `softplus` on logits, which is
//! exact and finite over the whole f64 range.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::graph::{softplus, Graph, Var};
use crate::tensor::Tensor;

/// Smoothing constant of the soft-overlap loss.
pub const DICE_EPS: f64 = 1.0;
/// Focal loss defaults.
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

fn check_binary_target(logits: &Tensor, target: &Tensor, op: &'static str) -> Result<()> {
    if logits.shape() != target.shape() {
        return Err(CoreError::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", logits.shape(), target.shape()),
        });
    }
    if target.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(CoreError::InvalidArgument { op, detail: "target must be 0/1".into() });
    }
    Ok(())
}

/// Soft-overlap loss with explicit smoothing:
/// `1 − (2·Σ p·G + ε) / (Σ p + Σ G + ε)` with `p = logistic(logits)`.
pub fn dice_loss_eps(g: &mut Graph, logits: Var, target: &Tensor, eps: f64) -> Result<Var> {
    check_binary_target(g.val(logits), target, "dice_loss")?;
    let gt = g.leaf(target.clone())?;
    let p = g.sigmoid(logits)?;
    let overlap = g.mul(p, gt)?;
    let inter = g.sum_all(overlap)?;
    let p_sum = g.sum_all(p)?;
    let g_sum = g.sum_all(gt)?;
    let denom = g.add(p_sum, g_sum)?;
    let numer = g.mul_scalar(inter, 2.0)?;
    let numer = g.add_scalar(numer, eps)?;
    let denom = g.add_scalar(denom, eps)?;
    let inv = g.pow_scalar(denom, -1.0)?;
    let frac = g.mul(numer, inv)?;
    let neg = g.mul_scalar(frac, -1.0)?;
    g.add_scalar(neg, 1.0)
}

/// [`dice_loss_eps`] with the default ε = [`DICE_EPS`].
pub fn dice_loss(g: &mut Graph, logits: Var, target: &Tensor) -> Result<Var> {
    dice_loss_eps(g, logits, target, DICE_EPS)
}

/// α-balanced focal loss, mean over pixels.
///
/// Implemented through the sign-flipped logit `s = (1 − 2G) ∘ z`, for
/// which per pixel: cross-entropy = softplus(s), focal factor
/// `(1 − p_t)^γ = σ(s)^γ`, and weight `α_t = αG + (1−α)(1−G)`.
pub fn focal_loss(g: &mut Graph, logits: Var, target: &Tensor, alpha: f64, gamma: f64) -> Result<Var> {
    check_binary_target(g.val(logits), target, "focal_loss")?;
    let shape = target.shape().to_vec();
    let sign = Tensor::new(&shape, target.data().iter().map(|&y| 1.0 - 2.0 * y).collect())?;
    let alpha_t = Tensor::new(&shape, target.data().iter().map(|&y| alpha * y + (1.0 - alpha) * (1.0 - y)).collect())?;
    let sign = g.leaf(sign)?;
    let alpha_t = g.leaf(alpha_t)?;
    let s = g.mul(logits, sign)?;
    let ce = g.softplus(s)?;
    let p_flip = g.sigmoid(s)?;
    let modulate = g.pow_scalar(p_flip, gamma)?;
    let weighted = g.mul(alpha_t, modulate)?;
    let term = g.mul(weighted, ce)?;
    g.mean_all(term)
}

/// `w_dice · dice + w_focal · focal` on one frame.
pub fn seg_loss(
    g: &mut Graph,
    logits: Var,
    target: &Tensor,
    w_dice: f64,
    w_focal: f64,
    alpha: f64,
    gamma: f64,
) -> Result<Var> {
    let d = dice_loss(g, logits, target)?;
    let f = focal_loss(g, logits, target, alpha, gamma)?;
    let dw = g.mul_scalar(d, w_dice)?;
    let fw = g.mul_scalar(f, w_focal)?;
    g.add(dw, fw)
}

/// Binary cross-entropy of one detection logit against a hard label,
/// `softplus(z) − y·z`, shape `[1]`.
pub fn bce_with_logit(g: &mut Graph, logit: Var, y: f64) -> Result<Var> {
    if g.val(logit).len() != 1 {
        return Err(CoreError::ShapeMismatch {
            op: "bce_with_logit",
            detail: format!("expected a single logit, got {:?}", g.val(logit).shape()),
        });
    }
    if y != 0.0 && y != 1.0 {
        return Err(CoreError::InvalidArgument { op: "bce_with_logit", detail: format!("label {y} not in {{0,1}}") });
    }
    let z = if g.val(logit).shape() == [1] { logit } else { g.reshape(logit, &[1])? };
    let sp = g.softplus(z)?;
    let yz = g.mul_scalar(z, y)?;
    g.sub(sp, yz)
}

/// Mean detection cross-entropy over a clip (graph form, on logits).
pub fn detection_loss(g: &mut Graph, logits: &[Var], labels: &[f64]) -> Result<Var> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(CoreError::InvalidArgument {
            op: "detection_loss",
            detail: format!("{} logits vs {} labels", logits.len(), labels.len()),
        });
    }
    let mut acc: Option<Var> = None;
    for (&z, &y) in logits.iter().zip(labels) {
        let term = bce_with_logit(g, z, y)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    g.mul_scalar(acc.unwrap(), 1.0 / logits.len() as f64)
}

/// Mean binary cross-entropy on probabilities (the interface evaluated
/// by oracles; training uses [`detection_loss`] on logits). Probabilities
/// are clamped to [1e-12, 1−1e-12] before the logarithm.
pub fn cme_loss(p_detect: &[f64], labels: &[u8]) -> Result<f64> {
    if p_detect.is_empty() || p_detect.len() != labels.len() {
        return Err(CoreError::InvalidArgument {
            op: "cme_loss",
            detail: format!("{} probabilities vs {} labels", p_detect.len(), labels.len()),
        });
    }
    let mut acc = 0.0;
    for (&p, &y) in p_detect.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) || y > 1 {
            return Err(CoreError::InvalidArgument {
                op: "cme_loss",
                detail: format!("p={p}, label={y}"),
            });
        }
        let pc = p.clamp(1e-12, 1.0 - 1e-12);
        acc -= if y == 1 { libm::log(pc) } else { libm::log(1.0 - pc) };
    }
    Ok(acc / p_detect.len() as f64)
}

/// Logit-domain reference of a single BCE term, for tests.
pub fn bce_term(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

/// Per-step loss record; wall time is filled by the caller that owns a
/// clock (the core stays `no_std`).
#[derive(Debug, Clone, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub dice: f64,
    pub focal: f64,
    pub detection: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.dice += other.dice;
        self.focal += other.focal;
        self.detection += other.detection;
    }

    pub fn scale(&mut self, s: f64) {
        self.total *= s;
        self.dice *= s;
        self.focal *= s;
        self.detection *= s;
    }
}

/// Convenience: builds per-frame seg losses and averages them, returning
/// the graph node plus a value breakdown.
pub fn mean_seg_loss(
    g: &mut Graph,
    frames: &[(Var, Tensor)],
    w_dice: f64,
    w_focal: f64,
    alpha: f64,
    gamma: f64,
) -> Result<(Var, LossBreakdown)> {
    if frames.is_empty() {
        return Err(CoreError::InvalidArgument { op: "mean_seg_loss", detail: "no frames".into() });
    }
    let mut breakdown = LossBreakdown::default();
    let mut acc: Option<Var> = None;
    let mut dice_terms: Vec<Var> = Vec::new();
    let mut focal_terms: Vec<Var> = Vec::new();
    for (logits, target) in frames {
        let d = dice_loss(g, *logits, target)?;
        let f = focal_loss(g, *logits, target, alpha, gamma)?;
        dice_terms.push(d);
        focal_terms.push(f);
        let dw = g.mul_scalar(d, w_dice)?;
        let fw = g.mul_scalar(f, w_focal)?;
        let term = g.add(dw, fw)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    let n = frames.len() as f64;
    let loss = g.mul_scalar(acc.unwrap(), 1.0 / n)?;
    for d in &dice_terms {
        breakdown.dice += g.val(*d).item()? / n;
    }
    for f in &focal_terms {
        breakdown.focal += g.val(*f).item()? / n;
    }
    breakdown.total = g.val(loss).item()?;
    Ok((loss, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn logits_leaf(g: &mut Graph, shape: &[usize], v: f64) -> Var {
        g.leaf_grad(Tensor::full(shape, v)).unwrap()
    }

    #[test]
    fn dice_perfect_match_is_zero() {
        // p ≡ G ≡ 1: saturate logits so p is 1 to machine precision
        let mut g = Graph::new();
        let z = logits_leaf(&mut g, &[4, 4], 50.0);
        let target = Tensor::full(&[4, 4], 1.0);
        let l = dice_loss(&mut g, z, &target).unwrap();
        assert!(g.val(l).item().unwrap().abs() < 1e-12);
    }

    #[test]
    fn dice_all_fp_matches_closed_form() {
        // p ≡ 1, G ≡ 0 on n pixels → 1 − 1/(n+1)
        let mut g = Graph::new();
        let z = logits_leaf(&mut g, &[3, 3], 50.0);
        let target = Tensor::zeros(&[3, 3]);
        let l = dice_loss(&mut g, z, &target).unwrap();
        let n = 9.0;
        assert!((g.val(l).item().unwrap() - (1.0 - 1.0 / (n + 1.0))).abs() < 1e-12);
    }

    #[test]
    fn dice_partial_overlap_eps_ablated() {
        // |P|=|G|=2 with overlap 1, ε→0 → 1 − 2/4 = 0.5
        let mut g = Graph::new();
        let mut z = Tensor::full(&[1, 4], -50.0);
        z.data_mut()[0] = 50.0;
        z.data_mut()[1] = 50.0;
        let z = g.leaf_grad(z).unwrap();
        let target = Tensor::new(&[1, 4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let l = dice_loss_eps(&mut g, z, &target, 0.0).unwrap();
        assert!((g.val(l).item().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn focal_zero_logit_positive_pixel() {
        let mut g = Graph::new();
        let z = logits_leaf(&mut g, &[1, 1], 0.0);
        let target = Tensor::full(&[1, 1], 1.0);
        let l = focal_loss(&mut g, z, &target, FOCAL_ALPHA, FOCAL_GAMMA).unwrap();
        let expect = 0.25 * 0.25 * libm::log(2.0); // −α(1−p)^γ ln p at p=0.5
        assert!((g.val(l).item().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn focal_gamma_zero_is_half_bce() {
        let mut g = Graph::new();
        let vals = vec![0.7, -1.3, 2.1, 0.0];
        let z = g.leaf_grad(Tensor::new(&[2, 2], vals.clone()).unwrap()).unwrap();
        let target = Tensor::new(&[2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let l = focal_loss(&mut g, z, &target, 0.5, 0.0).unwrap();
        let bce: f64 = vals
            .iter()
            .zip(target.data())
            .map(|(&z, &y)| bce_term(z, y))
            .sum::<f64>()
            / 4.0;
        assert!((g.val(l).item().unwrap() - 0.5 * bce).abs() < 1e-12);
    }

    #[test]
    fn focal_and_dice_gradients_verify() {
        use crate::gradcheck::grad_check;
        use crate::params::ParamStore;
        let mut store = ParamStore::new();
        store
            .register("z", Tensor::new(&[2, 3], vec![0.4, -0.8, 1.2, 0.0, 2.0, -1.5]).unwrap(), true)
            .unwrap();
        let target = Tensor::new(&[2, 3], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let t2 = target.clone();
        let ids = [store.id("z").unwrap()];
        let rep = grad_check(
            &mut store,
            &ids,
            move |s, g| {
                let z = g.param(s, s.id("z")?)?;
                seg_loss(g, z, &t2, 1.0, 1.0, FOCAL_ALPHA, FOCAL_GAMMA)
            },
            1e-5,
            8,
            0,
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn cme_loss_closed_forms() {
        // perfect predictions → ~0
        let l = cme_loss(&[1.0, 0.0, 1.0], &[1, 0, 1]).unwrap();
        assert!(l < 1e-10);
        // uniform 0.5 → ln 2
        let l = cme_loss(&[0.5; 4], &[1, 0, 1, 0]).unwrap();
        assert!((l - libm::log(2.0)).abs() < 1e-12);
        assert!(cme_loss(&[0.5], &[1, 0]).is_err());
    }

    #[test]
    fn detection_loss_matches_probability_form() {
        let mut g = Graph::new();
        let zs: Vec<Var> = [0.3, -1.0, 2.0]
            .iter()
            .map(|&z| g.leaf_grad(Tensor::scalar(z)).unwrap())
            .collect();
        let labels = [1.0, 0.0, 1.0];
        let l = detection_loss(&mut g, &zs, &labels).unwrap();
        let probs: Vec<f64> = [0.3, -1.0, 2.0].iter().map(|&z| crate::graph::sigmoid(z)).collect();
        let want = cme_loss(&probs, &[1, 0, 1]).unwrap();
        assert!((g.val(l).item().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn target_validation() {
        let mut g = Graph::new();
        let z = logits_leaf(&mut g, &[2], 0.0);
        let bad = Tensor::new(&[2], vec![0.5, 1.0]).unwrap();
        assert!(dice_loss(&mut g, z, &bad).is_err());
        let wrong_shape = Tensor::zeros(&[3]);
        assert!(focal_loss(&mut g, z, &wrong_shape, 0.25, 2.0).is_err());
    }
}
