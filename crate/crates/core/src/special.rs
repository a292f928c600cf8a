//! Special functions and log-space helpers used throughout inference.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardUniform};

pub use statrs::function::gamma::ln_gamma;

const SHIFT: f64 = 10.0;

/// Digamma function ψ(x) for x > 0.
///
/// Recurrence up to x ≥ 10, then the asymptotic Bernoulli series.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0, "digamma domain: {x}");
    let mut acc = 0.0;
    while x < SHIFT {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
    acc + x.ln() - 0.5 * inv - series
}

/// Trigamma function ψ′(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0, "trigamma domain: {x}");
    let mut acc = 0.0;
    while x < SHIFT {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))));
    acc + series
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes `xs` in place into a probability vector via log-sum-exp.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Draws ln Z for Z ~ Gamma(shape, rate) without underflow for tiny shapes.
///
/// Uses Gamma(a) = Gamma(a + 1) · U^{1/a} when a < 1.
pub fn sample_ln_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    let base = if shape < 1.0 { shape + 1.0 } else { shape };
    let g: f64 = Gamma::new(base, 1.0)
        .expect("gamma shape must be positive")
        .sample(rng);
    let mut ln = g.ln();
    if shape < 1.0 {
        let u: f64 = StandardUniform.sample(rng);
        // u ∈ [0, 1); guard the zero draw
        ln += u.max(f64::MIN_POSITIVE).ln() / shape;
    }
    ln - rate.ln()
}
