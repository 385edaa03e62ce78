//! Normal-distribution special functions with tail-stable evaluation.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// ln(2π)/2
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail Q(x) = 1 - Φ(x).
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Quantile of the standard normal.
pub fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Mills ratio R(s) = Q(s)/φ(s) for s > 0, by the Laplace continued fraction
/// 1/(s + 1/(s + 2/(s + 3/(s + ...)))) evaluated with modified Lentz.
pub fn mills_ratio_cf(s: f64) -> f64 {
    debug_assert!(s > 0.0);
    const TINY: f64 = 1e-300;
    let mut f = s;
    let mut c = s;
    let mut d = 0.0;
    for k in 1..2000 {
        let a = k as f64;
        d = s + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = s + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// ln Φ(x), accurate far into the lower tail.
pub fn ln_std_normal_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-std_normal_sf(x)).ln_1p()
    } else if x >= -5.0 {
        std_normal_cdf(x).ln()
    } else {
        std_normal_ln_pdf(x) + mills_ratio_cf(-x).ln()
    }
}

/// Asymptotic moments M_k(s) = ∫₀^∞ y^k e^{-sy - y²/2} dy, summed until the
/// terms stop shrinking. Only accurate for large s.
fn laplace_moment(k: u32, s: f64) -> f64 {
    // term_j = (-1)^j (k+2j)! / (2^j j! s^{k+2j+1})
    let mut term: f64 = (1..=k).map(|v| v as f64).product::<f64>() / s.powi(k as i32 + 1);
    let mut sum = term;
    let mut prev = term.abs();
    for j in 0..200u32 {
        let kk = (k + 2 * j) as f64;
        term *= -(kk + 1.0) * (kk + 2.0) / (2.0 * (j as f64 + 1.0) * s * s);
        if term.abs() >= prev {
            break;
        }
        sum += term;
        prev = term.abs();
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// First two raw moments of TN(m, c², 0), the normal N(m, c²) truncated to
/// (0, ∞). Returns `(E[U], E[U²])`.
///
/// With t = m/c and ψ = φ/Φ, E[U] = c(t + ψ(t)) and E[U²] = c²(1 + t(t + ψ(t))).
/// Both are evaluated without forming ψ once t is far in the lower tail, where
/// t + ψ(t) cancels catastrophically.
pub fn tn_moments(m: f64, c: f64) -> (f64, f64) {
    debug_assert!(c > 0.0);
    let t = m / c;
    let (r1, r2) = if t >= -5.0 {
        let psi = (std_normal_pdf(t) / std_normal_cdf(t)).max(0.0);
        let r1 = t + psi;
        (r1, 1.0 + t * r1)
    } else if t > -10.0 {
        let s = -t;
        let r = mills_ratio_cf(s);
        let r1 = (1.0 - s * r) / r;
        (r1, 1.0 - s * r1)
    } else {
        let s = -t;
        let m0 = laplace_moment(0, s);
        (laplace_moment(1, s) / m0, laplace_moment(2, s) / m0)
    };
    (c * r1, c * c * r2)
}
