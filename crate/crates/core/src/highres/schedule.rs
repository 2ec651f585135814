//! Normalized quintic time schedule.
//!
//! `f(t) = ∫₀ᵗ (a s² + b s + d)² ds`, `γ_t = f(t) / f(1)`, `γ̇_t = f'(t) / f(1)`.
//! The integrand is a square, so `γ` is non-decreasing with `γ_0 = 0` and
//! `γ_1 = 1` for every `(a, b, d)` with `d > 0`.

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Floor added to the softplus of the `d` head.
pub const D_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `γ_t = t`.
    Linear,
    /// Per-feature quintic driven by the conditioning embedding.
    Learned,
}

/// Schedule value, time derivative, and their partials w.r.t. `(a, b, d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuinticEval<T> {
    pub gamma: T,
    pub gamma_dot: T,
    pub d_gamma: [T; 3],
    pub d_gamma_dot: [T; 3],
}

#[inline]
fn poly<T: Scalar>(a: T, b: T, d: T, t: T) -> T {
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t3 * t, t3 * t2);
    a * a * t5 / T::of(5.0)
        + a * b * t4 / T::two()
        + (b * b + T::two() * a * d) * t3 / T::of(3.0)
        + b * d * t2
        + d * d * t
}

#[inline]
fn poly_grad<T: Scalar>(a: T, b: T, d: T, t: T) -> [T; 3] {
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t3 * t, t3 * t2);
    let three = T::of(3.0);
    [
        T::two() * a * t5 / T::of(5.0) + b * t4 / T::two() + T::two() * d * t3 / three,
        a * t4 / T::two() + T::two() * b * t3 / three + d * t2,
        T::two() * a * t3 / three + b * t2 + T::two() * d * t,
    ]
}

/// `f(t)` of the quintic.
pub fn quintic<T: Scalar>(a: T, b: T, d: T, t: T) -> T {
    poly(a, b, d, t)
}

/// Evaluates the normalized schedule at `t` with exact partial derivatives.
pub fn eval_quintic<T: Scalar>(a: T, b: T, d: T, t: T) -> QuinticEval<T> {
    let f_t = poly(a, b, d, t);
    let f_1 = poly(a, b, d, T::one());
    let q = a * t * t + b * t + d;
    let fp = q * q;
    let g_t = poly_grad(a, b, d, t);
    let g_1 = poly_grad(a, b, d, T::one());
    let gp = [T::two() * q * t * t, T::two() * q * t, T::two() * q];
    let inv = T::one() / f_1;
    let inv2 = inv * inv;
    let mut d_gamma = [T::zero(); 3];
    let mut d_gamma_dot = [T::zero(); 3];
    for k in 0..3 {
        d_gamma[k] = (g_t[k] * f_1 - f_t * g_1[k]) * inv2;
        d_gamma_dot[k] = (gp[k] * f_1 - fp * g_1[k]) * inv2;
    }
    QuinticEval {
        gamma: f_t * inv,
        gamma_dot: fp * inv,
        d_gamma,
        d_gamma_dot,
    }
}

/// Maps a raw network head to `d = softplus(raw) + D_FLOOR`; also returns
/// `∂d/∂raw`.
#[inline]
pub fn d_from_raw<T: Scalar>(raw: T) -> (T, T) {
    (raw.softplus() + T::of(D_FLOOR), raw.sigmoid())
}

/// Raw head value for which [`d_from_raw`] returns `d`.
pub fn raw_for_d(d: f64) -> f64 {
    let s = d - D_FLOOR;
    s.exp_m1().ln()
}
