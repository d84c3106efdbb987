//! Binary masks and the segmentation quality measures: region overlap J,
//! contour accuracy F, and their mean.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Default contour matching tolerance in pixels at the 32×32 canvas.
pub const CONTOUR_TOL: usize = 1;

/// Binary mask with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, bits: Vec<bool>) -> Result<Mask> {
        if h == 0 || w == 0 || bits.len() != h * w {
            return Err(CoreError::InvalidArgument {
                op: "Mask::new",
                detail: format!("{h}x{w} with {} bits", bits.len()),
            });
        }
        Ok(Mask { h, w, bits })
    }

    pub fn empty(h: usize, w: usize) -> Mask {
        Mask { h, w, bits: vec![false; h * w] }
    }

    /// Strict sign rule: a pixel is foreground iff its logit is > 0.
    pub fn from_logits(logits: &Tensor) -> Result<Mask> {
        if logits.rank() != 2 {
            return Err(CoreError::InvalidArgument {
                op: "Mask::from_logits",
                detail: format!("expected rank 2, got {:?}", logits.shape()),
            });
        }
        Ok(Mask {
            h: logits.rows(),
            w: logits.cols(),
            bits: logits.data().iter().map(|&v| v > 0.0).collect(),
        })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.w + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.w + j] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_blank(&self) -> bool {
        self.bits.iter().all(|&b| !b)
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.h == other.h && self.w == other.w
    }

    /// The mask as a 0/1 tensor of shape `[h, w]` (training target form).
    pub fn to_tensor(&self) -> Tensor {
        let data: Vec<f64> = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new(&[self.h, self.w], data).expect("mask dims are valid")
    }

    /// Mean coordinate `(i, j)` of foreground pixels; `None` when blank.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut si = 0.0;
        let mut sj = 0.0;
        let mut n = 0usize;
        for i in 0..self.h {
            for j in 0..self.w {
                if self.get(i, j) {
                    si += i as f64;
                    sj += j as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            None
        } else {
            Some((si / n as f64, sj / n as f64))
        }
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    /// Boundary pixels: foreground pixels 4-adjacent to background,
    /// where the image border counts as background.
    pub fn boundary(&self) -> Mask {
        let mut out = Mask::empty(self.h, self.w);
        for i in 0..self.h {
            for j in 0..self.w {
                if !self.get(i, j) {
                    continue;
                }
                let edge = i == 0
                    || j == 0
                    || i == self.h - 1
                    || j == self.w - 1
                    || !self.get(i - 1, j)
                    || !self.get(i + 1, j)
                    || !self.get(i, j - 1)
                    || !self.get(i, j + 1);
                if edge {
                    out.set(i, j, true);
                }
            }
        }
        out
    }
}

fn check_shapes(a: &Mask, b: &Mask, op: &'static str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(CoreError::ShapeMismatch {
            op,
            detail: format!("{}x{} vs {}x{}", a.h, a.w, b.h, b.w),
        });
    }
    Ok(())
}

/// Region similarity: |Y∩G| / |Y∪G|, with both-empty scoring 1.
pub fn region_j(y: &Mask, g: &Mask) -> Result<f64> {
    check_shapes(y, g, "region_j")?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (a, b) in y.bits.iter().zip(&g.bits) {
        inter += (a & b) as usize;
        union += (a | b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Contour accuracy: boundary precision/recall matched within Chebyshev
/// distance `tol`, F = 2PR/(P+R). Both boundaries empty → 1; exactly one
/// empty → 0.
pub fn contour_f(y: &Mask, g: &Mask, tol: usize) -> Result<f64> {
    check_shapes(y, g, "contour_f")?;
    let yb = y.boundary();
    let gb = g.boundary();
    let (ny, ng) = (yb.count(), gb.count());
    if ny == 0 && ng == 0 {
        return Ok(1.0);
    }
    if ny == 0 || ng == 0 {
        return Ok(0.0);
    }
    let matched = |p: &Mask, q: &Mask| -> usize {
        let mut hits = 0;
        for i in 0..p.h {
            for j in 0..p.w {
                if !p.get(i, j) {
                    continue;
                }
                let i0 = i.saturating_sub(tol);
                let j0 = j.saturating_sub(tol);
                let i1 = (i + tol).min(p.h - 1);
                let j1 = (j + tol).min(p.w - 1);
                'scan: for ii in i0..=i1 {
                    for jj in j0..=j1 {
                        if q.get(ii, jj) {
                            hits += 1;
                            break 'scan;
                        }
                    }
                }
            }
        }
        hits
    };
    let precision = matched(&yb, &gb) as f64 / ny as f64;
    let recall = matched(&gb, &yb) as f64 / ng as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Aggregates per-frame (J, F) pairs: (mean J, mean F, (J+F)/2).
pub fn jf_mean(per_frame: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if per_frame.is_empty() {
        return Err(CoreError::InvalidArgument { op: "jf_mean", detail: "empty evaluation set".into() });
    }
    let n = per_frame.len() as f64;
    let j: f64 = per_frame.iter().map(|p| p.0).sum::<f64>() / n;
    let f: f64 = per_frame.iter().map(|p| p.1).sum::<f64>() / n;
    Ok((j, f, 0.5 * (j + f)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        let mut bits = Vec::with_capacity(h * w);
        for r in rows {
            for c in r.chars() {
                bits.push(c == '#');
            }
        }
        Mask::new(h, w, bits).unwrap()
    }

    #[test]
    fn region_j_basics() {
        let a = mask_from(&["##..", "....", "....", "...."]);
        assert_eq!(region_j(&a, &a).unwrap(), 1.0);
        let b = mask_from(&["....", "....", "....", "..##"]);
        assert_eq!(region_j(&a, &b).unwrap(), 0.0);
        // |Y| = 2 ⊂ |G| = 4 → 0.5
        let g = mask_from(&["####", "....", "....", "...."]);
        assert_eq!(region_j(&a, &g).unwrap(), 0.5);
        // both empty → 1
        let e = Mask::empty(4, 4);
        assert_eq!(region_j(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn contour_f_basics() {
        let a = mask_from(&["........", ".###....", ".###....", ".###....", "........", "........", "........", "........"]);
        assert_eq!(contour_f(&a, &a, 1).unwrap(), 1.0);
        let e = Mask::empty(8, 8);
        assert_eq!(contour_f(&e, &a, 1).unwrap(), 0.0);
        assert_eq!(contour_f(&a, &e, 1).unwrap(), 0.0);
        assert_eq!(contour_f(&e, &e, 1).unwrap(), 1.0);
    }

    #[test]
    fn contour_f_one_pixel_shift_within_tol() {
        let a = mask_from(&["........", ".###....", ".###....", ".###....", "........", "........", "........", "........"]);
        let b = mask_from(&["........", "..###...", "..###...", "..###...", "........", "........", "........", "........"]);
        // every boundary pixel is within Chebyshev distance 1 of the other
        assert_eq!(contour_f(&a, &b, 1).unwrap(), 1.0);
        // with tol 0 only the overlapping boundary parts match
        let f0 = contour_f(&a, &b, 0).unwrap();
        assert!(f0 < 1.0 && f0 > 0.0);
    }

    #[test]
    fn boundary_of_filled_square_is_its_ring() {
        let full = mask_from(&["####", "####", "####", "####"]);
        let b = full.boundary();
        // interior 2×2 pixels are not boundary; the outer ring is
        assert_eq!(b.count(), 12);
        assert!(!b.get(1, 1) && !b.get(2, 2));
        assert!(b.get(0, 0) && b.get(3, 3));
    }

    #[test]
    fn growing_toward_target_never_decreases_j() {
        let g = mask_from(&["####", "####", "....", "...."]);
        let mut y = Mask::empty(4, 4);
        let mut last = region_j(&y, &g).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                y.set(i, j, true);
                let now = region_j(&y, &g).unwrap();
                assert!(now >= last);
                last = now;
            }
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn jf_mean_arithmetic() {
        assert_eq!(jf_mean(&[(1.0, 1.0)]).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(jf_mean(&[(1.0, 1.0), (0.0, 0.0)]).unwrap(), (0.5, 0.5, 0.5));
        assert!(jf_mean(&[]).is_err());
    }

    #[test]
    fn strict_sign_rule_zero_is_background() {
        let t = Tensor::new(&[1, 3], alloc::vec![0.0, 1e-300, -1e-300]).unwrap();
        let m = Mask::from_logits(&t).unwrap();
        assert!(!m.get(0, 0));
        assert!(m.get(0, 1));
        assert!(!m.get(0, 2));
    }

    #[test]
    fn symmetry() {
        let a = mask_from(&["##......", "##......", "........", "........", "........", "........", "........", "........"]);
        let b = mask_from(&["........", ".###....", ".#......", "........", "........", "........", "........", "........"]);
        assert_eq!(region_j(&a, &b).unwrap(), region_j(&b, &a).unwrap());
        assert_eq!(contour_f(&a, &b, 1).unwrap(), contour_f(&b, &a, 1).unwrap());
    }
}
