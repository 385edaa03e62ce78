//! Parametric imputation from fitted conditionals, and exact samplers for the
//! limiting distribution of nearest-neighbour imputation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BlockDims, CellTag, ImputationMeta, ImputedDataset, Side, StackedDataset};
use crate::density::ObservedDensity;
use crate::em::{self, Theta};
use crate::error::{FusionError, Result};
use crate::linalg::{block, segment, select_sym, select_vec, spd_inverse, symmetrize};
use crate::mixtures::MixtureParams;
use crate::model::Model;
use crate::skew_normal::SkewNormalParams;
use crate::special::tn_moments;
use crate::truncnorm::std_tn_sample;

/// Supplied models must satisfy the identification constraint to this
/// relative tolerance.
pub const CONSTRAINT_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrawMode {
    /// Sample the missing block from its conditional law.
    #[default]
    PosteriorDraw,
    /// Replace each draw by its conditional expectation.
    ConditionalMean,
}

impl DrawMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DrawMode::PosteriorDraw => "posterior-draw",
            DrawMode::ConditionalMean => "conditional-mean",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputationRequest {
    pub seed: u64,
    pub draw_mode: DrawMode,
    /// For mixtures, use each row's most probable component instead of
    /// drawing one from its responsibilities.
    pub hard_assignment: bool,
}

/// Symmetric square root of a PSD matrix, negative eigenvalues clipped.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

fn std_normal_vec<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

/// Missing block given the observed cells of one dataset's rows, for one
/// component: missing = μ_m + δ_m u + G(w_o − μ_o − δ_o u) + N(0, C).
struct SidePlan {
    dens: ObservedDensity,
    obs: Vec<usize>,
    mu_o: DVector<f64>,
    mu_m: DVector<f64>,
    delta_o: Option<DVector<f64>>,
    delta_m: Option<DVector<f64>>,
    gain: DMatrix<f64>,
    cov_sqrt: DMatrix<f64>,
}

impl SidePlan {
    fn new(t: &Theta, side: Side) -> Result<Self> {
        let dims = t.dims;
        let obs = dims.observed_indices(side);
        let mis: Vec<usize> = dims.missing_range(side).collect();
        let s_oo = select_sym(&t.sigma, &obs);
        let s_mo = DMatrix::from_fn(mis.len(), obs.len(), |i, j| t.sigma[(mis[i], obs[j])]);
        let gain = &s_mo * spd_inverse(&s_oo, "observed covariance")?;
        let cond = select_sym(&t.sigma, &mis) - &gain * s_mo.transpose();
        Ok(SidePlan {
            dens: t.density(side)?,
            mu_o: select_vec(&t.mu, &obs),
            mu_m: select_vec(&t.mu, &mis),
            delta_o: t.delta.as_ref().map(|d| select_vec(d, &obs)),
            delta_m: t.delta.as_ref().map(|d| select_vec(d, &mis)),
            obs,
            gain,
            cov_sqrt: psd_sqrt(&cond),
        })
    }

    fn mean_given_u(&self, row: &[f64], u: f64) -> DVector<f64> {
        let mut r = DVector::from_fn(self.obs.len(), |k, _| row[self.obs[k]] - self.mu_o[k]);
        let mut mean = self.mu_m.clone();
        if let (Some(d_o), Some(d_m)) = (&self.delta_o, &self.delta_m) {
            r -= d_o * u;
            mean += d_m * u;
        }
        mean + &self.gain * r
    }

    fn conditional_mean(&self, row: &[f64]) -> DVector<f64> {
        let u = if self.delta_o.is_some() {
            tn_moments(self.dens.eval(row).m, self.dens.c()).0
        } else {
            0.0
        };
        self.mean_given_u(row, u)
    }

    fn draw<R: Rng + ?Sized>(&self, row: &[f64], rng: &mut R) -> DVector<f64> {
        let u = if self.delta_o.is_some() {
            let m = self.dens.eval(row).m;
            let c = self.dens.c();
            (m + c * std_tn_sample(-m / c, rng)).max(0.0)
        } else {
            0.0
        };
        let e = std_normal_vec(self.mu_m.len(), rng);
        self.mean_given_u(row, u) + &self.cov_sqrt * e
    }
}

fn check_model(ds: &StackedDataset, model: &Model) -> Result<()> {
    if model.dims() != ds.dims() {
        return Err(FusionError::Dimension(format!(
            "model blocks {:?} do not match data blocks {:?}",
            model.dims(),
            ds.dims()
        )));
    }
    model.validate()?;
    let r = model.constraint_residual();
    if !(r <= CONSTRAINT_TOL) {
        return Err(FusionError::ConstraintViolation(r));
    }
    Ok(())
}

/// Fill every missing block from the model's conditional given the row's
/// observed cells. Row i draws from its own stream (seed, i), so output does
/// not depend on thread scheduling.
pub fn impute_parametric(ds: &StackedDataset, model: &Model, req: &ImputationRequest) -> Result<ImputedDataset> {
    check_model(ds, model)?;
    let (thetas, pi) = model.parts();
    let g = thetas.len();
    let plans = thetas
        .iter()
        .map(|t| Ok([SidePlan::new(t, Side::A)?, SidePlan::new(t, Side::B)?]))
        .collect::<Result<Vec<_>>>()?;
    let tau = if g > 1 { em::e_step(ds, &thetas, &pi)?.tau } else { vec![1.0; ds.n()] };
    let dims = ds.dims();

    let rows: Vec<(DVector<f64>, Option<usize>)> = (0..ds.n())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
            rng.set_stream(i as u64);
            let side = usize::from(ds.side(i) == Side::B);
            let row = ds.row(i);
            let t = &tau[i * g..(i + 1) * g];
            let comp = if g == 1 {
                Some(0)
            } else if req.hard_assignment {
                Some(argmax(t))
            } else if req.draw_mode == DrawMode::PosteriorDraw {
                Some(categorical(t, &mut rng))
            } else {
                None
            };
            let v = match (comp, req.draw_mode) {
                (Some(h), DrawMode::PosteriorDraw) => plans[h][side].draw(row, &mut rng),
                (Some(h), DrawMode::ConditionalMean) => plans[h][side].conditional_mean(row),
                (None, _) => {
                    let mut acc = plans[0][side].conditional_mean(row) * t[0];
                    for h in 1..g {
                        acc += plans[h][side].conditional_mean(row) * t[h];
                    }
                    acc
                }
            };
            (v, if g > 1 { comp } else { None })
        })
        .collect();

    let mut values = ds.values().clone();
    let tags = ds.mask().map(|o| if o { CellTag::Observed } else { CellTag::Parametric });
    let mut components = Vec::with_capacity(ds.n());
    for (i, (v, comp)) in rows.into_iter().enumerate() {
        let mis = dims.missing_range(ds.side(i));
        for (k, j) in mis.enumerate() {
            values[(i, j)] = v[k];
        }
        components.push(comp);
    }
    Ok(ImputedDataset {
        values,
        tags,
        spec: ds.spec().clone(),
        n_a: ds.n_a(),
        donors: vec![None; ds.n()],
        components,
        meta: ImputationMeta {
            method: "parametric".into(),
            family: Some(model.family().as_str().into()),
            seed: Some(req.seed),
            draw_mode: Some(req.draw_mode.as_str().into()),
        },
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for h in 1..v.len() {
        if v[h] > v[best] {
            best = h;
        }
    }
    best
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    for (h, &w) in p.iter().enumerate() {
        if u < w {
            return h;
        }
        u -= w;
    }
    // Rounding can leave u just above the last weight.
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

/// One component's X marginal and the laws of Y | X and Z | X.
struct XPlan {
    dims: BlockDims,
    mu_x: DVector<f64>,
    chol_xx: DMatrix<f64>,
    delta_x: Option<DVector<f64>>,
    x_dens: ObservedDensity,
    /// Σ_XX⁻¹δ_X / (1 + s) with s = δ_XᵀΣ_XX⁻¹δ_X, so τ_X = aᵀ(x − μ_X).
    a_x: DVector<f64>,
    gamma_x: f64,
    mu_r: DVector<f64>,
    gain: DMatrix<f64>,
    delta_r: Option<DVector<f64>>,
    sqrt_y: DMatrix<f64>,
    sqrt_z: DMatrix<f64>,
}

impl XPlan {
    fn new(t: &Theta) -> Result<Self> {
        let dims = t.dims;
        let xr = dims.xr();
        let rr = dims.x..dims.d();
        let sxx = block(&t.sigma, xr.clone(), xr.clone());
        let sxx_inv = spd_inverse(&sxx, "Sigma_XX")?;
        let srx = block(&t.sigma, rr.clone(), xr.clone());
        let gain = &srx * &sxx_inv;
        let cond = symmetrize(&(block(&t.sigma, rr.clone(), rr.clone()) - &gain * srx.transpose()));
        let (dy, dz) = (dims.y, dims.z);
        let delta_x = t.delta.as_ref().map(|d| segment(d, xr.clone()));
        let (a_x, gamma_x) = match &delta_x {
            Some(dx) => {
                let sd = &sxx_inv * dx;
                let s = dx.dot(&sd);
                (sd / (1.0 + s), 1.0 / (1.0 + s))
            }
            None => (DVector::zeros(dims.x), 1.0),
        };
        let delta_r = match (&t.delta, &delta_x) {
            (Some(d), Some(dx)) => Some(segment(d, rr.clone()) - &gain * dx),
            _ => None,
        };
        Ok(XPlan {
            dims,
            mu_x: segment(&t.mu, xr.clone()),
            chol_xx: crate::linalg::checked_cholesky(&sxx, "Sigma_XX")?.unpack(),
            x_dens: ObservedDensity::on_indices(&t.mu, &t.sigma, t.delta.as_ref(), xr.collect())?,
            delta_x,
            a_x,
            gamma_x,
            mu_r: segment(&t.mu, rr),
            gain,
            delta_r,
            sqrt_y: psd_sqrt(&block(&cond, 0..dy, 0..dy)),
            sqrt_z: psd_sqrt(&block(&cond, dy..dy + dz, dy..dy + dz)),
        })
    }

    fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut x = &self.mu_x + &self.chol_xx * std_normal_vec(self.dims.x, rng);
        if let Some(d) = &self.delta_x {
            x += d * std_tn_sample(0.0, rng);
        }
        x
    }

    /// Draw the Y block (`z = false`) or the Z block given x, with its own
    /// latent U_x ~ TN(τ_X, γ_X, 0).
    fn sample_block<R: Rng + ?Sized>(&self, x: &DVector<f64>, z: bool, rng: &mut R) -> DVector<f64> {
        let dx = x - &self.mu_x;
        let mean = &self.mu_r + &self.gain * &dx;
        let (start, len, sq) = if z {
            (self.dims.y, self.dims.z, &self.sqrt_z)
        } else {
            (0, self.dims.y, &self.sqrt_y)
        };
        let mut out = mean.rows(start, len).into_owned();
        if let Some(dr) = &self.delta_r {
            let tau = self.a_x.dot(&dx);
            let sd = self.gamma_x.sqrt();
            let u = (tau + sd * std_tn_sample(-tau / sd, rng)).max(0.0);
            out += dr.rows(start, len) * u;
        }
        out + sq * std_normal_vec(len, rng)
    }
}

/// Draws from the limit of nearest-neighbour imputation, with the component
/// labels behind each row's Y (`s`) and Z (`t`).
#[derive(Clone, Debug)]
pub struct AsymptoticSample {
    pub values: DMatrix<f64>,
    pub s: Vec<usize>,
    pub t: Vec<usize>,
}

/// X from the model's X marginal, then S and T drawn independently from
/// the component posterior given X; Y comes from component S and Z from
/// component T, each through its own latent variable. Any family works;
/// a single component gives S = T = 0.
pub fn asymptotic_nn_sample(model: &Model, n: usize, seed: u64) -> Result<AsymptoticSample> {
    model.validate()?;
    let (thetas, pi) = model.parts();
    let plans = thetas.iter().map(XPlan::new).collect::<Result<Vec<_>>>()?;
    let dims = model.dims();
    let g = plans.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = DMatrix::zeros(n, dims.d());
    let mut s_lab = Vec::with_capacity(n);
    let mut t_lab = Vec::with_capacity(n);
    let mut lw = vec![0.0; g];
    for i in 0..n {
        let k = categorical(&pi, &mut rng);
        let x = plans[k].sample_x(&mut rng);
        let (s, t) = if g == 1 {
            (0, 0)
        } else {
            for h in 0..g {
                lw[h] = pi[h].ln() + plans[h].x_dens.eval_compact(x.as_slice()).ln_f;
            }
            let lse = em::log_sum_exp(&lw);
            let w: Vec<f64> = lw.iter().map(|v| (v - lse).exp()).collect();
            (categorical(&w, &mut rng), categorical(&w, &mut rng))
        };
        let z = plans[t].sample_block(&x, true, &mut rng);
        let y = plans[s].sample_block(&x, false, &mut rng);
        for (j, v) in x.iter().chain(y.iter()).chain(z.iter()).enumerate() {
            values[(i, j)] = *v;
        }
        s_lab.push(s);
        t_lab.push(t);
    }
    Ok(AsymptoticSample {
        values,
        s: s_lab,
        t: t_lab,
    })
}

/// Skew-normal case: Y and Z given X each carry an independent latent
/// TN(τ_X, γ_X, 0) variable.
pub fn asymptotic_nn_sample_sn(params: &SkewNormalParams, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    Ok(asymptotic_nn_sample(&Model::SkewNormal(params.clone()), n, seed)?.values)
}

pub fn asymptotic_nn_sample_mixture(params: &MixtureParams, n: usize, seed: u64) -> Result<AsymptoticSample> {
    asymptotic_nn_sample(&Model::Mixture(params.clone()), n, seed)
}
