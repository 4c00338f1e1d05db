//! Log-space helpers shared by the accountants and the oracle.
//!
//! Probabilities in this crate routinely sit at 1e-12 and below while the
//! exponents reach 10^5, so products of the form `(1 - x)^n` are never
//! evaluated directly.

/// `ln(1 - x)` for `x <= 1`, accurate near zero.
#[inline]
pub fn ln_one_minus(x: f64) -> f64 {
    (-x).ln_1p()
}

/// `1 - exp(log_prod)`, i.e. the complement of a product given its logarithm.
#[inline]
pub fn one_minus_exp(log_prod: f64) -> f64 {
    -log_prod.exp_m1()
}

/// `(1 - x)^n` evaluated as `exp(n ln(1 - x))`.
#[inline]
pub fn pow_one_minus(x: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 1.0;
    }
    (n * ln_one_minus(x)).exp()
}

/// `1 - (1 - x)^n`.
#[inline]
pub fn complement_pow(x: f64, n: f64) -> f64 {
    if n == 0.0 || x == 0.0 {
        return 0.0;
    }
    one_minus_exp(n * ln_one_minus(x))
}

/// `tanh(eps / 2) = (e^eps - 1) / (e^eps + 1)`, stable for small and large eps.
#[inline]
pub fn half_tanh(eps: f64) -> f64 {
    (0.5 * eps).tanh()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Smallest integer `k` with `k >= x`, treating values within a relative
/// `1e-12` of an integer as that integer so `eps' = k eps` maps to `k`.
pub fn guarded_ceil(x: f64) -> u64 {
    if x <= 0.0 {
        return 0;
    }
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-12 * x.max(1.0) {
        return nearest as u64;
    }
    x.ceil() as u64
}

/// `ln(sum(exp(v)))` over the finite entries; `-inf` for an empty input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Sum of non-negative terms, added in ascending order of magnitude.
pub fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    terms.into_iter().sum()
}

/// Table of `ln(n!)` for `n = 0..=max`.
pub fn ln_factorials(max: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(max + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for n in 1..=max {
        acc += (n as f64).ln();
        table.push(acc);
    }
    table
}
