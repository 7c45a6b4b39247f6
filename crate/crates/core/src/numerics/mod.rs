//! Elementary kernels shared by the backbone, probe and scoring code.
//!
//! All arithmetic is `f64`; `f32` only appears in the feature cache.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::{derive_seed, splitmix64, SeededRng};

use crate::error::{ensure, Result};

pub const DEFAULT_LAYERNORM_EPS: f64 = 1e-5;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    ensure!(!v.is_empty(), "softmax of an empty vector");
    let max = max_of(v);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// `log Σ exp(v_i)`, evaluated as `max + log Σ exp(v_i - max)`.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    ensure!(!v.is_empty(), "logsumexp of an empty vector");
    let max = max_of(v);
    let total: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + total.ln())
}

/// Layer normalization with population variance.
pub fn layernorm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    ensure!(
        x.len() == gamma.len() && x.len() == beta.len(),
        "layernorm length mismatch: x={}, gamma={}, beta={}",
        x.len(),
        gamma.len(),
        beta.len()
    );
    ensure!(eps > 0.0, "layernorm eps must be positive, got {eps}");
    ensure!(!x.is_empty(), "layernorm of an empty vector");
    let mut out = vec![0.0; x.len()];
    layernorm_into(x, gamma, beta, eps, &mut out);
    Ok(out)
}

/// Unchecked layernorm kernel; callers guarantee matching lengths.
pub(crate) fn layernorm_into(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64, out: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for (((o, xi), g), b) in out.iter_mut().zip(x).zip(gamma).zip(beta) {
        *o = g * (xi - mean) * inv + b;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Neumaier-compensated sum, used as the extended-precision reference.
    fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for x in xs {
            let t = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - t) + x;
            } else {
                comp += (x - t) + sum;
            }
            sum = t;
        }
        sum + comp
    }

    #[test]
    fn softmax_uniform() {
        assert_eq!(softmax(&[0.0; 4]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn softmax_two_logits() {
        // e/(e+1) and 1/(e+1), from the logistic function evaluated directly.
        let p = softmax(&[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((p[1] - 0.268_941_421_369_995_1).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(softmax(&[]).is_err());
        assert!(logsumexp(&[]).is_err());
    }

    #[test]
    fn logsumexp_reference_values() {
        assert!((logsumexp(&[0.0; 7]).unwrap() - 7f64.ln()).abs() < 1e-15);
        assert_eq!(logsumexp(&[1000.0, 1000.0]).unwrap(), 1000.0 + 2f64.ln());
    }

    #[test]
    fn logsumexp_matches_naive_sum() {
        let mut rng = SeededRng::new(99);
        for _ in 0..200 {
            let v: Vec<f64> = (0..8).map(|_| rng.gaussian(0.0, 3.0)).collect();
            let naive = compensated_sum(v.iter().map(|x| x.exp())).ln();
            let got = logsumexp(&v).unwrap();
            assert!(((got - naive) / naive).abs() <= 1e-12, "{got} vs {naive}");
        }
    }

    #[test]
    fn layernorm_constant_input_is_zero() {
        let out = layernorm(&[3.5; 6], &[1.0; 6], &[0.0; 6], 1e-5).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layernorm_rejects_bad_arguments() {
        assert!(layernorm(&[1.0, 2.0], &[1.0], &[0.0, 0.0], 1e-5).is_err());
        assert!(layernorm(&[1.0, 2.0], &[1.0; 2], &[0.0; 2], 0.0).is_err());
    }

    #[test]
    fn layernorm_matches_direct_formula() {
        let mut rng = SeededRng::new(5);
        for _ in 0..100 {
            let n = 1 + rng.below(40);
            let x: Vec<f64> = (0..n).map(|_| rng.gaussian(1.0, 2.0)).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.gaussian(1.0, 0.3)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gaussian(0.0, 0.3)).collect();
            let got = layernorm(&x, &g, &b, 1e-5).unwrap();

            let mean = compensated_sum(x.iter().copied()) / n as f64;
            let var = compensated_sum(x.iter().map(|v| (v - mean).powi(2))) / n as f64;
            let sd = (var + 1e-5).sqrt();
            for i in 0..n {
                let want = g[i] * (x[i] - mean) / sd + b[i];
                assert!((got[i] - want).abs() <= 1e-12, "{} vs {}", got[i], want);
            }
        }
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    fn finite_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 1..max_len)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(v in finite_vec(16), c in -100.0f64..100.0) {
            let p = softmax(&v).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn softmax_is_permutation_equivariant(v in finite_vec(12), seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let perm = rng.permutation(v.len());
            let permuted: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
            let p = softmax(&v).unwrap();
            let q = softmax(&permuted).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((q[k] - p[i]).abs() <= 1e-15);
            }
        }

        #[test]
        fn logsumexp_is_bracketed_by_max(v in finite_vec(32)) {
            let lse = logsumexp(&v).unwrap();
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max);
            prop_assert!(lse <= max + (v.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn layernorm_shift_and_scale_invariance(
            v in prop::collection::vec(-10.0f64..10.0, 2..32),
            shift in -5.0f64..5.0,
            scale in 0.1f64..10.0,
        ) {
            let spread = v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - v.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let n = v.len();
            let ones = vec![1.0; n];
            let zeros = vec![0.0; n];
            let base = layernorm(&v, &ones, &zeros, 1e-12).unwrap();
            let moved: Vec<f64> = v.iter().map(|x| scale * x + shift).collect();
            let out = layernorm(&moved, &ones, &zeros, 1e-12).unwrap();
            for (a, b) in base.iter().zip(&out) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
            let mean = base.iter().sum::<f64>() / n as f64;
            let var = base.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() <= 1e-12);
            prop_assert!((var - 1.0).abs() <= 1e-6);
        }
    }
}
