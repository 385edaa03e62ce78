//! Multivariate skew-normal W = μ + δU + V with U ~ TN(0, 1, 0) and
//! V ~ N(0, Σ), giving density 2 φ_d(w; μ, Λ) Φ(αᵀ(w − μ)) with Λ = Σ + δδᵀ.

use std::f64::consts::FRAC_2_PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{BlockDims, StackedDataset};
use crate::density::ObservedDensity;
use crate::em::{self, EMConfig, FitReport, Theta};
use crate::error::{FusionError, Result};
use crate::gaussian::{check_dims, eta_to_theta, fit_gaussian, theta_to_eta, EtaParams};
use crate::linalg::{block, checked_cholesky, constraint_residual, segment, spd_inverse, symmetrize};
use crate::truncnorm::{std_tn_sample, TruncatedNormalSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub dims: BlockDims,
}

/// Law of (Y, Z) given X = x.
///
/// (Y, Z) | x = mu_given_x + delta_given_x·U_x + N(0, sigma_given_x) where
/// U_x ~ TN(tau_x, gamma_x, 0) and gamma_x is a variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSkewNormal {
    pub mu_given_x: DVector<f64>,
    pub tau_x: f64,
    pub gamma_x: f64,
    pub sigma_given_x: DMatrix<f64>,
    pub delta_given_x: DVector<f64>,
}

impl ConditionalSkewNormal {
    pub fn latent(&self) -> TruncatedNormalSpec {
        TruncatedNormalSpec {
            mean: self.tau_x,
            variance: self.gamma_x,
            lower_bound: 0.0,
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        let (eu, _) = self.latent().mean_var();
        &self.mu_given_x + &self.delta_given_x * eu
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let (_, vu) = self.latent().mean_var();
        &self.sigma_given_x + &self.delta_given_x * self.delta_given_x.transpose() * vu
    }
}

impl SkewNormalParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, delta: DVector<f64>, dims: BlockDims) -> Result<Self> {
        check_dims(&mu, &sigma, dims)?;
        if delta.len() != dims.d() || !delta.iter().all(|v| v.is_finite()) {
            return Err(FusionError::InvalidParams(format!(
                "skewness vector must have {} finite entries",
                dims.d()
            )));
        }
        let p = SkewNormalParams {
            mu,
            sigma: symmetrize(&sigma),
            delta,
            dims,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_gaussian(g: &crate::gaussian::GaussianParams) -> Self {
        SkewNormalParams {
            mu: g.mu.clone(),
            sigma: g.sigma.clone(),
            delta: DVector::zeros(g.dims.d()),
            dims: g.dims,
        }
    }

    /// Σ must be positive definite, which keeps δᵀΛ⁻¹δ = s/(1+s) < 1 with
    /// s = δᵀΣ⁻¹δ.
    pub fn validate(&self) -> Result<()> {
        checked_cholesky(&self.sigma, "Sigma").map_err(|e| FusionError::InvalidParams(e.to_string()))?;
        Ok(())
    }

    /// Λ = Σ + δδᵀ
    pub fn lambda(&self) -> DMatrix<f64> {
        &self.sigma + &self.delta * self.delta.transpose()
    }

    /// Direct skewness α = Λ⁻¹δ / √(1 − δᵀΛ⁻¹δ).
    pub fn alpha(&self) -> Result<DVector<f64>> {
        let inv = spd_inverse(&self.sigma, "Sigma")?;
        let sd = &inv * &self.delta;
        let s = self.delta.dot(&sd);
        // Λ⁻¹δ = Σ⁻¹δ/(1+s) and 1 − δᵀΛ⁻¹δ = 1/(1+s).
        Ok(sd / (1.0 + s).sqrt())
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.mu + &self.delta * FRAC_2_PI.sqrt()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.sigma + &self.delta * self.delta.transpose() * (1.0 - FRAC_2_PI)
    }

    pub fn constraint_residual(&self) -> f64 {
        constraint_residual(&self.sigma, self.dims)
    }

    pub fn to_eta(&self) -> Result<EtaParams> {
        theta_to_eta(&self.mu, &self.sigma, Some(&self.delta), self.dims)
    }

    pub fn from_eta(eta: &EtaParams) -> Result<Self> {
        let (mu, sigma, delta, dims) = eta_to_theta(eta)?;
        let delta = delta.ok_or_else(|| FusionError::InvalidParams("eta carries no skewness terms".into()))?;
        Ok(SkewNormalParams { mu, sigma, delta, dims })
    }

    /// Log-density of the full d-vector.
    pub fn ln_density(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.dims.d() {
            return Err(FusionError::Dimension(format!("point of length {} for d = {}", w.len(), self.dims.d())));
        }
        let dens = ObservedDensity::on_indices(&self.mu, &self.sigma, Some(&self.delta), (0..self.dims.d()).collect())?;
        Ok(dens.eval(w).ln_f)
    }

    pub fn density(&self, w: &[f64]) -> Result<f64> {
        Ok(self.ln_density(w)?.exp())
    }

    /// Skew-normal law of the coordinates in `idx`.
    pub fn marginal(&self, idx: &[usize]) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
        (
            crate::linalg::select_vec(&self.mu, idx),
            crate::linalg::select_sym(&self.sigma, idx),
            crate::linalg::select_vec(&self.delta, idx),
        )
    }

    /// Draw `n` rows through the latent representation.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let d = self.dims.d();
        let l = checked_cholesky(&self.sigma, "Sigma")?.unpack();
        let mut out = DMatrix::zeros(n, d);
        let mut e = DVector::zeros(d);
        for i in 0..n {
            let u = std_tn_sample(0.0, rng);
            for v in e.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let w = &self.mu + &self.delta * u + &l * &e;
            out.row_mut(i).copy_from(&w.transpose());
        }
        Ok(out)
    }

    /// Conditional law of (Y, Z) given X = x.
    pub fn conditional_sn(&self, x: &[f64]) -> Result<ConditionalSkewNormal> {
        let dims = self.dims;
        if x.len() != dims.x {
            return Err(FusionError::Dimension(format!("x of length {} for d_X = {}", x.len(), dims.x)));
        }
        let xr = dims.xr();
        let rr = dims.x..dims.d();
        let sxx = block(&self.sigma, xr.clone(), xr.clone());
        let srx = block(&self.sigma, rr.clone(), xr.clone());
        let srr = block(&self.sigma, rr.clone(), rr.clone());
        let dx = segment(&self.delta, xr.clone());
        let dr = segment(&self.delta, rr.clone());
        let diff = DVector::from_column_slice(x) - segment(&self.mu, xr.clone());

        let sxx_inv = spd_inverse(&sxx, "Sigma_XX")?;
        let gain = &srx * &sxx_inv;
        // τ and γ through Σ_XX⁻¹ and Sherman–Morrison on Λ_XX = Σ_XX + δ_Xδ_Xᵀ.
        let s_d = &sxx_inv * &dx;
        let s = dx.dot(&s_d);
        let tau_x = s_d.dot(&diff) / (1.0 + s);
        let gamma_x = 1.0 / (1.0 + s);
        Ok(ConditionalSkewNormal {
            mu_given_x: segment(&self.mu, rr) + &gain * &diff,
            tau_x,
            gamma_x,
            sigma_given_x: symmetrize(&(srr - &gain * srx.transpose())),
            delta_given_x: dr - &gain * dx,
        })
    }

    /// Starting point used when none is supplied: the closed-form Gaussian
    /// fit for (μ, Σ) with δ_j = sign(skewness_j)·0.5·sd_j and μ shifted so
    /// the implied mean stays at the Gaussian one.
    pub fn default_init(ds: &StackedDataset) -> Result<Self> {
        let g = fit_gaussian(ds)?;
        let w = vec![1.0; ds.n()];
        let theta = em::skew_start(ds, &w, Theta::from(&g));
        Ok(SkewNormalParams {
            mu: theta.mu,
            sigma: theta.sigma,
            delta: theta.delta.expect("skew start sets delta"),
            dims: theta.dims,
        })
    }
}

/// Constrained EM fit of the skew-normal matching model.
pub fn fit_sn_em(ds: &StackedDataset, init: &SkewNormalParams, config: &EMConfig) -> Result<(SkewNormalParams, FitReport)> {
    config.validate()?;
    crate::gaussian::check_rows(ds)?;
    if init.dims != ds.dims() {
        return Err(FusionError::Dimension("initial parameters do not match the data blocks".into()));
    }
    init.validate()?;
    let run = em::run_em(ds, vec![Theta::from(init)], vec![1.0], config, false)?;
    let theta = run.components[0].clone();
    let report = FitReport::single("skew-normal", &run);
    let params = SkewNormalParams {
        mu: theta.mu,
        sigma: theta.sigma,
        delta: theta.delta.expect("skew family"),
        dims: theta.dims,
    };
    Ok((params, report))
}

/// [`fit_sn_em`] from [`SkewNormalParams::default_init`].
pub fn fit_skew_normal(ds: &StackedDataset, config: &EMConfig) -> Result<(SkewNormalParams, FitReport)> {
    let init = SkewNormalParams::default_init(ds)?;
    fit_sn_em(ds, &init, config)
}
