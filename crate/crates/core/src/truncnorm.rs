//! Lower-truncated normal TN(mean, variance, lower_bound).

use rand::Rng;
use rand_distr::{Distribution, Exp, Open01};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;

use crate::error::{FusionError, Result};
use crate::special::{std_normal_sf, tn_moments};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormalSpec {
    pub mean: f64,
    pub variance: f64,
    pub lower_bound: f64,
}

impl TruncatedNormalSpec {
    pub fn new(mean: f64, variance: f64, lower_bound: f64) -> Result<Self> {
        if !(variance > 0.0) || !mean.is_finite() || lower_bound.is_nan() || !variance.is_finite() {
            return Err(FusionError::InvalidParams(format!(
                "truncated normal needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(TruncatedNormalSpec {
            mean,
            variance,
            lower_bound,
        })
    }

    /// (E[U], Var[U]).
    pub fn mean_var(&self) -> (f64, f64) {
        let sd = self.variance.sqrt();
        let (e1, e2) = tn_moments(self.mean - self.lower_bound, sd);
        (self.lower_bound + e1, e2 - e1 * e1)
    }
}

/// Standard normal conditioned on Z ≥ alpha.
///
/// Inverse CDF through the upper tail while alpha ≤ 5, and Robert's
/// exponential-proposal rejection sampler beyond.
pub fn std_tn_sample<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha <= 5.0 {
        let v: f64 = Open01.sample(rng);
        let z = SQRT_2 * erfc_inv(2.0 * v * std_normal_sf(alpha));
        z.max(alpha)
    } else {
        let rate = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
        let exp = Exp::new(rate).expect("positive rate");
        loop {
            let z = alpha + exp.sample(rng);
            let u: f64 = rng.random();
            if u <= (-0.5 * (z - rate) * (z - rate)).exp() {
                return z;
            }
        }
    }
}

pub fn tn_sample<R: Rng + ?Sized>(spec: &TruncatedNormalSpec, rng: &mut R) -> f64 {
    let sd = spec.variance.sqrt();
    let alpha = (spec.lower_bound - spec.mean) / sd;
    (spec.mean + sd * std_tn_sample(alpha, rng)).max(spec.lower_bound)
}
