//! Cost benchmark for windowed spatio-temporal attention versus dense
//! attention over all clip tokens.
//!
//! Pair counts come from the closed-form laws (`H·W·P²·T²` windowed,
//! `(T·H·W)²` dense). Wall time is measured on a plain-`f64` attention
//! routine shared by both paths, with identity projections, so the measured
//! ratio reflects the pair counts rather than implementation differences.

use std::time::Instant;

use anyhow::{bail, Result};
use rvos_core::adapter::{dense_pair_count, hsa_pair_count};
use rvos_core::rng::Rng;

#[derive(Debug, Clone, Copy)]
pub struct BenchResult {
    pub h: usize,
    pub w: usize,
    pub t: usize,
    pub p: usize,
    pub hsa_pairs: u128,
    pub dense_pairs: u128,
    pub pair_ratio: f64,
    pub hsa_ms: f64,
    pub dense_ms: f64,
    pub time_ratio: f64,
}

impl BenchResult {
    /// Single parseable report line (`key=value` tokens).
    pub fn report_line(&self) -> String {
        format!(
            "bench-hsa h={} w={} t={} p={} hsa_pairs={} dense_pairs={} pair_ratio={:.6} \
             hsa_ms={:.3} dense_ms={:.3} time_ratio={:.4}",
            self.h,
            self.w,
            self.t,
            self.p,
            self.hsa_pairs,
            self.dense_pairs,
            self.pair_ratio,
            self.hsa_ms,
            self.dense_ms,
            self.time_ratio
        )
    }
}

/// Self-attention with identity projections over `tokens` (`n` rows of
/// width `c`), writing into `out`. One scratch row of scores at a time.
fn attend(tokens: &[f64], n: usize, c: usize, scores: &mut [f64], out: &mut [f64]) {
    let scale = 1.0 / (c as f64).sqrt();
    for i in 0..n {
        let qi = &tokens[i * c..(i + 1) * c];
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            let kj = &tokens[j * c..(j + 1) * c];
            let mut dot = 0.0;
            for e in 0..c {
                dot += qi[e] * kj[e];
            }
            scores[j] = dot * scale;
            if scores[j] > max {
                max = scores[j];
            }
        }
        let mut denom = 0.0;
        for s in scores[..n].iter_mut() {
            *s = (*s - max).exp();
            denom += *s;
        }
        let oi = &mut out[i * c..(i + 1) * c];
        oi.fill(0.0);
        for j in 0..n {
            let wgt = scores[j] / denom;
            let vj = &tokens[j * c..(j + 1) * c];
            for e in 0..c {
                oi[e] += wgt * vj[e];
            }
        }
    }
}

/// Time `f` over `reps` runs and return the median in milliseconds.
fn median_ms<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times[times.len() / 2]
}

/// Run the benchmark at one configuration. `c` is the token width and
/// `reps` the number of timed repetitions (median reported).
pub fn run(h: usize, w: usize, t: usize, p: usize, c: usize, reps: usize) -> Result<BenchResult> {
    if p == 0 || h % p != 0 || w % p != 0 {
        bail!("patch size {p} does not tile a {h}x{w} map");
    }
    if t == 0 || c == 0 || reps == 0 {
        bail!("t, token width and reps must be positive");
    }
    let n_tokens = t * h * w;
    let mut rng = Rng::new(1234);
    let tokens: Vec<f64> = (0..n_tokens * c).map(|_| rng.normal()).collect();
    let mut out = vec![0.0f64; n_tokens * c];
    let mut scores = vec![0.0f64; n_tokens];

    let dense_ms = median_ms(reps, || {
        attend(&tokens, n_tokens, c, &mut scores, &mut out);
    });
    let dense_sink = out.iter().sum::<f64>();

    // Windowed path: gather each sub-volume's tokens (all frames), attend
    // within it, scatter back — the same decompose/attend/recompose shape
    // the adapter uses, so gather cost is part of the measurement.
    let window = p * p * t;
    let mut buf = vec![0.0f64; window * c];
    let mut buf_out = vec![0.0f64; window * c];
    let hsa_ms = median_ms(reps, || {
        for bi in 0..h / p {
            for bj in 0..w / p {
                let mut r = 0;
                for tt in 0..t {
                    for i in bi * p..(bi + 1) * p {
                        for j in bj * p..(bj + 1) * p {
                            let src = ((tt * h + i) * w + j) * c;
                            buf[r * c..(r + 1) * c].copy_from_slice(&tokens[src..src + c]);
                            r += 1;
                        }
                    }
                }
                attend(&buf, window, c, &mut scores, &mut buf_out);
                let mut r = 0;
                for tt in 0..t {
                    for i in bi * p..(bi + 1) * p {
                        for j in bj * p..(bj + 1) * p {
                            let dst = ((tt * h + i) * w + j) * c;
                            out[dst..dst + c].copy_from_slice(&buf_out[r * c..(r + 1) * c]);
                            r += 1;
                        }
                    }
                }
            }
        }
    });
    let hsa_sink = out.iter().sum::<f64>();
    // Keep the optimizer from discarding either computation.
    if !(dense_sink.is_finite() && hsa_sink.is_finite()) {
        bail!("benchmark produced non-finite outputs");
    }

    let hsa_pairs = hsa_pair_count(h, w, t, p);
    let dense_pairs = dense_pair_count(h, w, t);
    Ok(BenchResult {
        h,
        w,
        t,
        p,
        hsa_pairs,
        dense_pairs,
        pair_ratio: hsa_pairs as f64 / dense_pairs as f64,
        hsa_ms,
        dense_ms,
        time_ratio: hsa_ms / dense_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_counts_follow_the_closed_forms() {
        let r = run(8, 8, 2, 4, 4, 1).unwrap();
        assert_eq!(r.hsa_pairs, (8 * 8 * 4 * 4 * 2 * 2) as u128);
        assert_eq!(r.dense_pairs, ((2 * 8 * 8) * (2 * 8 * 8)) as u128);
        assert!((r.pair_ratio - (4.0 * 4.0) / (8.0 * 8.0)).abs() < 1e-12);
        assert!(r.hsa_ms > 0.0 && r.dense_ms > 0.0);
    }

    #[test]
    fn full_window_equals_dense_pairs() {
        let r = run(4, 4, 3, 4, 4, 1).unwrap();
        assert_eq!(r.hsa_pairs, r.dense_pairs);
    }

    #[test]
    fn invalid_patch_rejected() {
        assert!(run(8, 8, 2, 3, 4, 1).is_err());
    }
}
