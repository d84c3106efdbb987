//! Dense row-major `f64` tensor. This is the only value type the
//! numeric core computes with; shapes are explicit and checked at every
//! operation boundary.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::rng::Rng;

/// Dense tensor: `shape` and row-major `data` with
/// `data.len() == shape.iter().product()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn shape_str(shape: &[usize]) -> String {
    format!("{shape:?}")
}

impl Tensor {
    /// Builds a tensor after validating the element count. Rejects
    /// zero-sized dimensions: empty tensors are never meaningful here
    /// and banning them keeps every downstream reduction well-defined.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(CoreError::InvalidArgument {
                op: "Tensor::new",
                detail: format!("degenerate shape {}", shape_str(shape)),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CoreError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {} needs {} values, got {}", shape_str(shape), n, data.len()),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        debug_assert!(n > 0);
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        let n: usize = shape.iter().product();
        debug_assert!(n > 0);
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    /// Gaussian init with standard deviation `std`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: rng.normals(n, std) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // zero-sized tensors are rejected at construction
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a `[1]`-shaped tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "Tensor::item",
                detail: format!("expected a single element, shape is {}", shape_str(&self.shape)),
            });
        }
        Ok(self.data[0])
    }

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    /// Number of columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the same data under a new shape.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// Elementwise in-place `self += scale * other`; shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(CoreError::ShapeMismatch {
                op: "Tensor::add_scaled",
                detail: format!("{} vs {}", shape_str(&self.shape), shape_str(&other.shape)),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    fn check2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(CoreError::ShapeMismatch {
                op,
                detail: format!("expected rank 2, got {}", shape_str(&self.shape)),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self · other` for rank-2 operands: `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.check2("matmul")?;
        let (k2, n) = other.check2("matmul")?;
        if k != k2 {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                detail: format!("{} vs {}", shape_str(&self.shape), shape_str(&other.shape)),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Tensor::new(&[m, n], out)
    }

    /// `self · otherᵀ`: `[m,k] · [n,k]ᵀ -> [m,n]`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.check2("matmul_nt")?;
        let (n, k2) = other.check2("matmul_nt")?;
        if k != k2 {
            return Err(CoreError::ShapeMismatch {
                op: "matmul_nt",
                detail: format!("{} vs {}", shape_str(&self.shape), shape_str(&other.shape)),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[p] * b[p];
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::new(&[m, n], out)
    }

    /// `selfᵀ · other`: `[k,m]ᵀ · [k,n] -> [m,n]`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.check2("matmul_tn")?;
        let (k2, n) = other.check2("matmul_tn")?;
        if k != k2 {
            return Err(CoreError::ShapeMismatch {
                op: "matmul_tn",
                detail: format!("{} vs {}", shape_str(&self.shape), shape_str(&other.shape)),
            });
        }
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let a = &self.data[p * m..(p + 1) * m];
            let b = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let av = a[i];
                if av == 0.0 {
                    continue;
                }
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &bv) in dst.iter_mut().zip(b) {
                    *d += av * bv;
                }
            }
        }
        Tensor::new(&[m, n], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_element_count() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
        assert!(Tensor::new(&[], vec![]).is_err());
    }

    #[test]
    fn matmul_small_known() {
        let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_variants_agree_with_explicit_transposes() {
        let mut rng = Rng::new(1);
        let a = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let b = Tensor::randn(&[5, 3], 1.0, &mut rng);
        // a · bᵀ  ==  a · (bᵀ materialized)
        let mut bt = Tensor::zeros(&[3, 5]);
        for i in 0..5 {
            for j in 0..3 {
                bt.set2(j, i, b.at2(i, j));
            }
        }
        let via_nt = a.matmul_nt(&b).unwrap();
        let direct = a.matmul(&bt).unwrap();
        for (x, y) in via_nt.data().iter().zip(direct.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        // aᵀ · c
        let c = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let mut at = Tensor::zeros(&[3, 4]);
        for i in 0..4 {
            for j in 0..3 {
                at.set2(j, i, a.at2(i, j));
            }
        }
        let via_tn = a.matmul_tn(&c).unwrap();
        let direct2 = at.matmul(&c).unwrap();
        for (x, y) in via_tn.data().iter().zip(direct2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matches!(a.matmul(&b), Err(CoreError::ShapeMismatch { .. })));
    }

    #[test]
    fn add_scaled_accumulates() {
        let mut a = Tensor::zeros(&[2, 2]);
        let b = Tensor::full(&[2, 2], 2.0);
        a.add_scaled(&b, 0.5).unwrap();
        assert_eq!(a.data(), &[1.0; 4]);
        assert!(a.add_scaled(&Tensor::zeros(&[4]), 1.0).is_err());
    }
}
