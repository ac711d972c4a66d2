//! Small numeric helpers shared across modules.

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Stable `log Σ exp(x_i)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights in place into probabilities and returns the log normalizer.
pub fn softmax_in_place(values: &mut [f64]) -> f64 {
    let lse = log_sum_exp(values);
    for v in values.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}

/// Standard normal density.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Whether `total`, a plain sum of `n` probabilities, equals one up to the
/// rounding such a sum can accumulate.
pub fn sums_to_one(total: f64, n: usize) -> bool {
    (total - 1.0).abs() <= 1e-12 + 4.0 * n as f64 * f64::EPSILON
}

pub fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

/// Branch-free `exp` for `x ≤ 0` style arguments, written so loops over it
/// vectorize. Inputs are clamped to `[-708, 709]`; relative error is a few ulp.
#[inline(always)]
pub fn exp_branchless(x: f64) -> f64 {
    exp_kernel::<false>(x)
}

/// `exp_branchless` with the polynomial evaluated by fused multiply-adds when `FMA` is set.
/// Only pass `true` from code compiled with the `fma` target feature, otherwise
/// `mul_add` falls back to a slow library call.
#[inline(always)]
pub(crate) fn exp_kernel<const FMA: bool>(x: f64) -> f64 {
    let fma = |a: f64, b: f64, c: f64| if FMA { a.mul_add(b, c) } else { a * b + c };
    let x = x.max(-708.0).min(709.0);
    let shifted = x * LOG2E + ROUND_MAGIC;
    let kf = shifted - ROUND_MAGIC;
    let r = fma(-kf, LN2_LO, fma(-kf, LN2_HI, x));
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = fma(p, r, c);
    }
    // The low mantissa bits of `shifted` hold k in two's complement; shifting
    // them into the exponent field builds 2^k directly.
    p * f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52)
}
