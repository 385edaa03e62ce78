//! Multivariate normal matching: the regression reparameterisation and the
//! closed-form fit under Σ_YZ = Σ_YX Σ_XX⁻¹ Σ_XZ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{BlockDims, Side, StackedDataset};
use crate::error::{FusionError, Result};
use crate::linalg::{block, constraint_residual, segment, spd_inverse, symmetrize};
use crate::mstep;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub dims: BlockDims,
}

/// Regression of one block on X (and, for skew-normal models, on the latent U):
/// `response = alpha + lambda·u + beta·x + N(0, omega)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionBlock {
    pub alpha: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub lambda: Option<DVector<f64>>,
}

/// Marginal parameters of X.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XBlock {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub delta: Option<DVector<f64>>,
}

/// The (η_X, η_Y, η_Z) parameterisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaParams {
    pub x: XBlock,
    pub y: RegressionBlock,
    pub z: RegressionBlock,
}

pub(crate) fn check_dims(mu: &DVector<f64>, sigma: &DMatrix<f64>, dims: BlockDims) -> Result<()> {
    let d = dims.d();
    if mu.len() != d || sigma.nrows() != d || sigma.ncols() != d {
        return Err(FusionError::Dimension(format!(
            "expected length-{d} mean and {d}×{d} covariance, got {} and {}×{}",
            mu.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if !mu.iter().chain(sigma.iter()).all(|v| v.is_finite()) {
        return Err(FusionError::InvalidParams("non-finite entry".into()));
    }
    Ok(())
}

impl GaussianParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, dims: BlockDims) -> Result<Self> {
        check_dims(&mu, &sigma, dims)?;
        Ok(GaussianParams {
            mu,
            sigma: symmetrize(&sigma),
            dims,
        })
    }

    pub fn standard(dims: BlockDims) -> Self {
        GaussianParams {
            mu: DVector::zeros(dims.d()),
            sigma: DMatrix::identity(dims.d(), dims.d()),
            dims,
        }
    }

    pub fn constraint_residual(&self) -> f64 {
        constraint_residual(&self.sigma, self.dims)
    }

    pub fn to_eta(&self) -> Result<EtaParams> {
        theta_to_eta(&self.mu, &self.sigma, None, self.dims)
    }

    pub fn from_eta(eta: &EtaParams) -> Result<Self> {
        let (mu, sigma, _, dims) = eta_to_theta(eta)?;
        Ok(GaussianParams { mu, sigma, dims })
    }
}

/// Split (μ, Σ[, δ]) into the marginal of X and the regressions of Y and Z on X.
pub(crate) fn theta_to_eta(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    delta: Option<&DVector<f64>>,
    dims: BlockDims,
) -> Result<EtaParams> {
    let (xr, yr, zr) = (dims.xr(), dims.yr(), dims.zr());
    let sxx = block(sigma, xr.clone(), xr.clone());
    let sxx_inv = spd_inverse(&sxx, "Sigma_XX")?;
    let mu_x = segment(mu, xr.clone());
    let delta_x = delta.map(|d| segment(d, xr.clone()));
    let reg = |r: std::ops::Range<usize>| {
        let sox = block(sigma, r.clone(), xr.clone());
        let beta = &sox * &sxx_inv;
        let alpha = segment(mu, r.clone()) - &beta * &mu_x;
        let omega = symmetrize(&(block(sigma, r.clone(), r.clone()) - &beta * sox.transpose()));
        let lambda = match (delta, &delta_x) {
            (Some(d), Some(dx)) => Some(segment(d, r.clone()) - &beta * dx),
            _ => None,
        };
        RegressionBlock {
            alpha,
            beta,
            omega,
            lambda,
        }
    };
    Ok(EtaParams {
        x: XBlock {
            mu: mu_x.clone(),
            sigma: sxx,
            delta: delta_x.clone(),
        },
        y: reg(yr),
        z: reg(zr),
    })
}

/// Rebuild (μ, Σ, δ) from η; Σ_YZ is set by the identification constraint.
pub(crate) fn eta_to_theta(
    eta: &EtaParams,
) -> Result<(DVector<f64>, DMatrix<f64>, Option<DVector<f64>>, BlockDims)> {
    let dx = eta.x.mu.len();
    let dy = eta.y.alpha.len();
    let dz = eta.z.alpha.len();
    let dims = BlockDims::new(dx, dy, dz);
    let shape_ok = |r: &RegressionBlock, k: usize| {
        r.beta.shape() == (k, dx)
            && r.omega.shape() == (k, k)
            && r.lambda.as_ref().is_none_or(|l| l.len() == k)
    };
    if eta.x.sigma.shape() != (dx, dx)
        || eta.x.delta.as_ref().is_some_and(|d| d.len() != dx)
        || !shape_ok(&eta.y, dy)
        || !shape_ok(&eta.z, dz)
    {
        return Err(FusionError::Dimension("inconsistent eta block sizes".into()));
    }
    let skew = eta.x.delta.is_some();
    if skew != eta.y.lambda.is_some() || skew != eta.z.lambda.is_some() {
        return Err(FusionError::Dimension(
            "skewness terms must be present in all blocks or none".into(),
        ));
    }
    let d = dims.d();
    let sxx = &eta.x.sigma;
    let syx = &eta.y.beta * sxx;
    let szx = &eta.z.beta * sxx;
    let syy = &eta.y.omega + &syx * eta.y.beta.transpose();
    let szz = &eta.z.omega + &szx * eta.z.beta.transpose();
    let syz = &syx * eta.z.beta.transpose();

    let mut sigma = DMatrix::zeros(d, d);
    let (xr, yr, zr) = (dims.xr(), dims.yr(), dims.zr());
    let mut put = |r: std::ops::Range<usize>, c: std::ops::Range<usize>, m: &DMatrix<f64>| {
        sigma.view_mut((r.start, c.start), (r.len(), c.len())).copy_from(m);
    };
    put(xr.clone(), xr.clone(), sxx);
    put(yr.clone(), xr.clone(), &syx);
    put(xr.clone(), yr.clone(), &syx.transpose());
    put(zr.clone(), xr.clone(), &szx);
    put(xr.clone(), zr.clone(), &szx.transpose());
    put(yr.clone(), yr.clone(), &syy);
    put(zr.clone(), zr.clone(), &szz);
    put(yr.clone(), zr.clone(), &syz);
    put(zr.clone(), yr.clone(), &syz.transpose());
    let sigma = symmetrize(&sigma);

    let mut mu = DVector::zeros(d);
    mu.rows_mut(0, dx).copy_from(&eta.x.mu);
    mu.rows_mut(dx, dy).copy_from(&(&eta.y.alpha + &eta.y.beta * &eta.x.mu));
    mu.rows_mut(dx + dy, dz).copy_from(&(&eta.z.alpha + &eta.z.beta * &eta.x.mu));

    let delta = eta.x.delta.as_ref().map(|dxv| {
        let mut delta = DVector::zeros(d);
        delta.rows_mut(0, dx).copy_from(dxv);
        let ly = eta.y.lambda.as_ref().expect("checked above");
        let lz = eta.z.lambda.as_ref().expect("checked above");
        delta.rows_mut(dx, dy).copy_from(&(ly + &eta.y.beta * dxv));
        delta.rows_mut(dx + dy, dz).copy_from(&(lz + &eta.z.beta * dxv));
        delta
    });
    Ok((mu, sigma, delta, dims))
}

/// Maximum-likelihood fit of the constrained normal model.
///
/// μ_X and Σ_XX use all n rows; the Y|X regression uses A's rows and Z|X uses
/// B's, each from centred sufficient statistics with 1/n divisors.
pub fn fit_gaussian(ds: &StackedDataset) -> Result<GaussianParams> {
    check_rows(ds)?;
    let w = vec![1.0; ds.n()];
    let eta = gaussian_mstep(ds, &w)?;
    GaussianParams::from_eta(&eta)
}

pub(crate) fn check_rows(ds: &StackedDataset) -> Result<()> {
    let dims = ds.dims();
    if ds.n() < dims.x + 2 {
        return Err(FusionError::InsufficientRows(format!(
            "n = {} but at least {} rows are needed",
            ds.n(),
            dims.x + 2
        )));
    }
    for (side, k) in [(Side::A, dims.y), (Side::B, dims.z)] {
        let have = ds.rows_of(side).len();
        let need = dims.x + k + 1;
        if have < need {
            return Err(FusionError::InsufficientRows(format!(
                "dataset {} has {have} rows but at least {need} are needed",
                side.tag()
            )));
        }
    }
    Ok(())
}

/// Weighted Gaussian M-step; weights index stacked rows.
pub(crate) fn gaussian_mstep(ds: &StackedDataset, w: &[f64]) -> Result<EtaParams> {
    let (mu, sigma) = mstep::x_block_gaussian(ds, w);
    Ok(EtaParams {
        x: XBlock {
            mu,
            sigma,
            delta: None,
        },
        y: mstep::regression(ds, Side::A, w, None)?,
        z: mstep::regression(ds, Side::B, w, None)?,
    })
}

/// Conditional law of the missing block given the observed cells of one row,
/// from the joint (μ, Σ) by Schur complement.
pub fn gaussian_conditional(
    params: &GaussianParams,
    side: Side,
    x: &[f64],
    own: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dims = params.dims;
    let obs = dims.observed_indices(side);
    let mis: Vec<usize> = dims.missing_range(side).collect();
    let s_oo = crate::linalg::select_sym(&params.sigma, &obs);
    let s_mo = DMatrix::from_fn(mis.len(), obs.len(), |i, j| params.sigma[(mis[i], obs[j])]);
    let s_mm = crate::linalg::select_sym(&params.sigma, &mis);
    let inv = spd_inverse(&s_oo, "observed covariance")?;
    let w_o = DVector::from_iterator(obs.len(), x.iter().chain(own).copied());
    let diff = w_o - crate::linalg::select_vec(&params.mu, &obs);
    let gain = &s_mo * inv;
    let mean = crate::linalg::select_vec(&params.mu, &mis) + &gain * diff;
    let cov = symmetrize(&(s_mm - &gain * s_mo.transpose()));
    Ok((mean, cov))
}
