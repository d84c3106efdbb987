//! Fixed sinusoidal positional encodings (1-D sequence and 2-D grid).
//!
//! The 1-D code at position `t` interleaves `sin(t/ω_i)` and
//! `cos(t/ω_i)` over geometrically spaced wavelengths
//! `ω_i = 10000^(2i/d)`. The 2-D code is the concatenation of two
//! half-width 1-D codes, one per axis, so `d` must be divisible by 4.

use alloc::format;
use alloc::vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

fn pe1d_into(out: &mut [f64], pos: f64) {
    let d = out.len();
    debug_assert!(d % 2 == 0);
    for i in 0..d / 2 {
        let omega = libm::pow(10000.0, 2.0 * i as f64 / d as f64);
        let angle = pos / omega;
        out[2 * i] = libm::sin(angle);
        out[2 * i + 1] = libm::cos(angle);
    }
}

/// 1-D code at a (possibly fractional) position; shape `[1, d]`,
/// `d` even and nonzero.
pub fn pe1d_at(pos: f64, d: usize) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(CoreError::InvalidArgument {
            op: "pe1d",
            detail: format!("width must be even and nonzero, got {d}"),
        });
    }
    let mut out = vec![0.0; d];
    pe1d_into(&mut out, pos);
    Tensor::new(&[1, d], out)
}

/// 1-D code at an integer index.
pub fn pe1d(t: usize, d: usize) -> Result<Tensor> {
    pe1d_at(t as f64, d)
}

/// 2-D code at a (possibly fractional) grid position; shape `[1, d]`,
/// `d` divisible by 4. First half encodes the row, second the column.
pub fn pe2d_at(i: f64, j: f64, d: usize) -> Result<Tensor> {
    if d == 0 || d % 4 != 0 {
        return Err(CoreError::InvalidArgument {
            op: "pe2d",
            detail: format!("width must be divisible by 4 and nonzero, got {d}"),
        });
    }
    let mut out = vec![0.0; d];
    pe1d_into(&mut out[..d / 2], i);
    pe1d_into(&mut out[d / 2..], j);
    Tensor::new(&[1, d], out)
}

/// 2-D code at integer grid indices.
pub fn pe2d(i: usize, j: usize, d: usize) -> Result<Tensor> {
    pe2d_at(i as f64, j as f64, d)
}

/// All 2-D codes of an `h` by `w` grid stacked row-major: `[h*w, d]`.
pub fn pe2d_grid(h: usize, w: usize, d: usize) -> Result<Tensor> {
    if d == 0 || d % 4 != 0 {
        return Err(CoreError::InvalidArgument {
            op: "pe2d_grid",
            detail: format!("width must be divisible by 4 and nonzero, got {d}"),
        });
    }
    let mut out = vec![0.0; h * w * d];
    for i in 0..h {
        for j in 0..w {
            let row = &mut out[(i * w + j) * d..(i * w + j + 1) * d];
            pe1d_into(&mut row[..d / 2], i as f64);
            pe1d_into(&mut row[d / 2..], j as f64);
        }
    }
    Tensor::new(&[h * w, d], out)
}

/// 1-D codes of positions `0..n` stacked: `[n, d]`.
pub fn pe1d_seq(n: usize, d: usize) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(CoreError::InvalidArgument {
            op: "pe1d_seq",
            detail: format!("width must be even and nonzero, got {d}"),
        });
    }
    let mut out = vec![0.0; n * d];
    for t in 0..n {
        pe1d_into(&mut out[t * d..(t + 1) * d], t as f64);
    }
    Tensor::new(&[n, d], out)
}

/// Distinctness check used by tests and debug assertions: no two codes
/// of the index set coincide.
pub fn all_distinct(codes: &[Tensor], tol: f64) -> bool {
    for a in 0..codes.len() {
        for b in (a + 1)..codes.len() {
            let far = codes[a]
                .data()
                .iter()
                .zip(codes[b].data())
                .any(|(x, y)| libm::fabs(x - y) > tol);
            if !far {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_is_sin0_cos0_pattern() {
        let p = pe1d(0, 6).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn first_pair_is_plain_sin_cos_of_t() {
        let p = pe1d(3, 8).unwrap();
        assert!((p.data()[0] - libm::sin(3.0)).abs() < 1e-15);
        assert!((p.data()[1] - libm::cos(3.0)).abs() < 1e-15);
    }

    #[test]
    fn widths_validated() {
        assert!(pe1d(0, 5).is_err());
        assert!(pe1d(0, 0).is_err());
        assert!(pe2d(0, 0, 6).is_err());
        assert!(pe2d(0, 0, 8).is_ok());
    }

    #[test]
    fn pe2d_is_concat_of_axis_codes() {
        let p = pe2d(2, 5, 8).unwrap();
        let pi = pe1d(2, 4).unwrap();
        let pj = pe1d(5, 4).unwrap();
        assert_eq!(&p.data()[..4], pi.data());
        assert_eq!(&p.data()[4..], pj.data());
    }

    #[test]
    fn grid_rows_match_pointwise_codes() {
        let grid = pe2d_grid(3, 4, 8).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let single = pe2d(i, j, 8).unwrap();
                let row = &grid.data()[(i * 4 + j) * 8..(i * 4 + j + 1) * 8];
                assert_eq!(row, single.data());
            }
        }
    }

    #[test]
    fn codes_distinct_over_small_grid() {
        let mut codes = alloc::vec::Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                codes.push(pe2d(i, j, 8).unwrap());
            }
        }
        assert!(all_distinct(&codes, 1e-9));
        // and along time
        let seq: alloc::vec::Vec<_> = (0..16).map(|t| pe1d(t, 8).unwrap()).collect();
        assert!(all_distinct(&seq, 1e-9));
    }
}
