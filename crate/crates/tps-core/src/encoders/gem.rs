//! Generalized mean pooling over token features.
//!
//! Per dimension, `((1/n) * sum_k x_k^q)^(1/q)`: the arithmetic mean at
//! q = 1, sliding toward max pooling as q grows. Real powers of negative
//! activations are undefined, so inputs clamp to a small positive floor
//! before the power, the standard GeM treatment. The forward is computed
//! in max-scaled form so large q never overflows.

use crate::error::{CoreError, Result};

pub const GEM_CLAMP: f64 = 1e-6;

pub struct GemCache {
    /// Clamped inputs, `[n, d]`.
    pub clamped: Vec<f64>,
    /// Per-dimension max of the clamped inputs.
    pub m: Vec<f64>,
    /// Per-dimension `(1/n) * sum (c/m)^q`.
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

pub fn gem_fwd(tokens: &[f64], n: usize, d: usize, q: f64) -> (Vec<f64>, GemCache) {
    debug_assert!(n >= 1 && q >= 1.0);
    debug_assert_eq!(tokens.len(), n * d);
    let clamped: Vec<f64> = tokens.iter().map(|&x| x.max(GEM_CLAMP)).collect();
    let mut m = vec![GEM_CLAMP; d];
    for row in clamped.chunks_exact(d) {
        for (mj, &c) in m.iter_mut().zip(row) {
            if c > *mj {
                *mj = c;
            }
        }
    }
    let mut s = vec![0.0; d];
    for row in clamped.chunks_exact(d) {
        for j in 0..d {
            s[j] += (row[j] / m[j]).powf(q);
        }
    }
    for sj in s.iter_mut() {
        *sj /= n as f64;
    }
    let y: Vec<f64> = m
        .iter()
        .zip(&s)
        .map(|(&mj, &sj)| mj * sj.powf(1.0 / q))
        .collect();
    (
        y.clone(),
        GemCache {
            clamped,
            m,
            s,
            y,
            n,
            d,
        },
    )
}

/// Accumulate `d(loss)/d(tokens)` into `dx` and, when `dq` is given, the
/// gradient w.r.t. the exponent. `tokens` are the raw (unclamped) inputs;
/// entries at or below the clamp floor get zero gradient.
pub fn gem_bwd(
    cache: &GemCache,
    tokens: &[f64],
    dy: &[f64],
    q: f64,
    dx: &mut [f64],
    dq: Option<&mut f64>,
) {
    let (n, d) = (cache.n, cache.d);
    let inv_n = 1.0 / n as f64;
    // dy/dc_ij = s_j^(1/q - 1) * (c_ij/m_j)^(q-1) / n
    for j in 0..d {
        let s_pow = cache.s[j].powf(1.0 / q - 1.0);
        for i in 0..n {
            if tokens[i * d + j] <= GEM_CLAMP {
                continue;
            }
            let r = cache.clamped[i * d + j] / cache.m[j];
            dx[i * d + j] += dy[j] * s_pow * r.powf(q - 1.0) * inv_n;
        }
    }
    if let Some(dq) = dq {
        // dy/dq = y * (w/q - ln(s)/q^2), with w the c^q-weighted mean of
        // ln(c/m).
        for j in 0..d {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let r = cache.clamped[i * d + j] / cache.m[j];
                let rq = r.powf(q);
                num += rq * r.ln();
                den += rq;
            }
            let w = num / den;
            *dq += dy[j] * cache.y[j] * (w / q - cache.s[j].ln() / (q * q));
        }
    }
}

/// GeM-pool an `[n, d]` token matrix into a `d`-vector.
pub fn gem_pool(tokens: &[f64], n: usize, d: usize, q: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(CoreError::Argument(
            "gem_pool requires at least one token".to_string(),
        ));
    }
    if q < 1.0 {
        return Err(CoreError::Argument(format!("gem_pool requires q >= 1, got {q}")));
    }
    if tokens.len() != n * d {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{n}x{d}"),
            got: format!("{} values", tokens.len()),
        });
    }
    Ok(gem_fwd(tokens, n, d, q).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn q_one_is_the_mean() {
        let y = gem_pool(&[1.0, 2.0, 3.0], 3, 1, 1.0).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn q_three_matches_direct_evaluation() {
        // ((1 + 8 + 27)/3)^(1/3) = 12^(1/3)
        let y = gem_pool(&[1.0, 2.0, 3.0], 3, 1, 3.0).unwrap();
        let expect = 12f64.powf(1.0 / 3.0);
        assert!((y[0] - expect).abs() < 1e-12, "{} vs {expect}", y[0]);
        assert!((y[0] - 2.2894).abs() < 1e-4);
    }

    #[test]
    fn large_q_approaches_max() {
        let y = gem_pool(&[1.0, 2.0, 3.0], 3, 1, 64.0).unwrap();
        assert!((y[0] - 3.0).abs() / 3.0 < 0.05, "{}", y[0]);
    }

    #[test]
    fn huge_values_do_not_overflow() {
        let y = gem_pool(&[1e200, 2e200], 2, 1, 32.0).unwrap();
        assert!(y[0].is_finite());
        assert!(y[0] <= 2e200 && y[0] >= 1e200);
    }

    #[test]
    fn empty_and_bad_q_are_errors() {
        assert!(gem_pool(&[], 0, 1, 2.0).is_err());
        assert!(gem_pool(&[1.0], 1, 1, 0.5).is_err());
        assert!(gem_pool(&[1.0, 2.0], 1, 1, 2.0).is_err());
    }

    #[test]
    fn interpolates_between_mean_and_max() {
        let mut rng = crate::rng::rng_for(9, "gem_prop", &[]);
        for _ in 0..200 {
            let n = rng.gen_range(1..10);
            let d = rng.gen_range(1..6);
            let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(0.0..2.0)).collect();
            let qs = [1.0, 1.5, 2.0, 4.0, 8.0, 32.0, 64.0];
            let mut prev: Option<Vec<f64>> = None;
            for &q in &qs {
                let y = gem_pool(&x, n, d, q).unwrap();
                for j in 0..d {
                    let col: Vec<f64> = (0..n).map(|i| x[i * d + j]).collect();
                    let mean: f64 = col.iter().sum::<f64>() / n as f64;
                    let max = col.iter().cloned().fold(f64::MIN, f64::max);
                    assert!(y[j] >= mean - 1e-9, "gem below mean at q={q}");
                    assert!(y[j] <= max + 1e-9, "gem above max at q={q}");
                    if let Some(p) = &prev {
                        assert!(y[j] >= p[j] - 1e-9, "not monotone in q at q={q}");
                    }
                }
                prev = Some(y);
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// mean <= gem <= max elementwise and monotonicity in q on
            /// arbitrary non-negative inputs.
            #[test]
            fn interpolation_property(
                x in proptest::collection::vec(0.0f64..5.0, 1..40),
                q_lo in 1.0f64..8.0,
                dq in 0.1f64..8.0,
            ) {
                let n = x.len();
                let lo = gem_pool(&x, n, 1, q_lo).unwrap()[0];
                let hi = gem_pool(&x, n, 1, q_lo + dq).unwrap()[0];
                let mean: f64 = x.iter().sum::<f64>() / n as f64;
                let max = x.iter().cloned().fold(f64::MIN, f64::max);
                prop_assert!(lo >= mean - 1e-9);
                prop_assert!(hi <= max + 1e-9);
                prop_assert!(hi >= lo - 1e-9);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::rng::rng_for(11, "gem_fd", &[]);
        let (n, d) = (4, 3);
        // Mix of positive and negative so the clamp path is exercised.
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.5)).collect();
        let dy: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for &q in &[1.5, 2.0, 3.7] {
            let (_, cache) = gem_fwd(&x, n, d, q);
            let mut dx = vec![0.0; n * d];
            let mut dq = 0.0;
            gem_bwd(&cache, &x, &dy, q, &mut dx, Some(&mut dq));

            let f = |x: &[f64], q: f64| -> f64 {
                let (y, _) = gem_fwd(x, n, d, q);
                y.iter().zip(&dy).map(|(a, b)| a * b).sum()
            };
            let h = 1e-6;
            for i in 0..n * d {
                if (x[i] - GEM_CLAMP).abs() < 2.0 * h {
                    continue; // clamp kink
                }
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (f(&xp, q) - f(&xm, q)) / (2.0 * h);
                let rel = (dx[i] - fd).abs() / dx[i].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "q={q} dx[{i}]: {} vs {fd}", dx[i]);
            }
            let fd_q = (f(&x, q + h) - f(&x, q - h)) / (2.0 * h);
            let rel = (dq - fd_q).abs() / dq.abs().max(fd_q.abs()).max(1e-6);
            assert!(rel < 1e-4, "q={q} dq: {dq} vs {fd_q}");
        }
    }
}
