//! Log-space arithmetic helpers.

use std::f64::consts::PI;

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Shifted log-sum-exp over a slice. Empty input and all `-inf` give `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `ln(1 - exp(x))` for `x <= 0`, accurate near both ends.
#[inline]
pub fn ln_1m_exp(x: f64) -> f64 {
    debug_assert!(x <= 0.0);
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
#[inline]
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + ln_1m_exp(b - a)
}

/// Log density of a zero-mean Gaussian with variance `var` at `x`, normalization included.
#[inline]
pub fn ln_normal(x: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - 0.5 * x * x / var
}

/// Peak value of [`ln_normal`]: `-ln(σ√(2π))`.
#[inline]
pub fn ln_normal_peak(sigma: f64) -> f64 {
    -(sigma * (2.0 * PI).sqrt()).ln()
}
