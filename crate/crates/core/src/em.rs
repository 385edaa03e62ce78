//! The EM engine shared by every latent-variable fit. A single skew-normal fit
//! is the one-component case with the mixing weight pinned at 1.

use std::f64::consts::FRAC_2_PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BlockDims, Side, StackedDataset};
use crate::density::ObservedDensity;
use crate::error::{FusionError, Result};
use crate::gaussian::{eta_to_theta, gaussian_mstep, EtaParams, GaussianParams, XBlock};
use crate::linalg::{checked_cholesky, floor_eigenvalues, RCOND_MIN};
use crate::mstep::{self, Latent};
use crate::skew_normal::SkewNormalParams;
use crate::special::tn_moments;

/// How mixture fits choose their starting responsibilities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// k-means++ per dataset on its observed columns, clusters of A and B
    /// paired by their X centroids.
    #[default]
    KmeansPlusPlus,
    /// Uniformly chosen rows as centres, one assignment pass.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EMConfig {
    /// Stop when |ℓ_t − ℓ_{t−1}| ≤ tol·|ℓ_{t−1}|.
    pub tol: f64,
    pub max_iters: usize,
    pub n_restarts: usize,
    pub seed: u64,
    pub init_strategy: InitStrategy,
}

impl Default for EMConfig {
    fn default() -> Self {
        EMConfig {
            tol: 1e-8,
            max_iters: 2000,
            n_restarts: 10,
            seed: 0,
            init_strategy: InitStrategy::KmeansPlusPlus,
        }
    }
}

impl EMConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(FusionError::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(FusionError::Config("max_iters must be at least 1".into()));
        }
        if self.n_restarts == 0 {
            return Err(FusionError::Config("n_restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardEvent {
    pub iteration: usize,
    pub component: usize,
    pub kind: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub final_loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: String,
    pub components: usize,
    pub converged: bool,
    pub iterations: usize,
    pub final_loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub guard_events: Vec<GuardEvent>,
    pub restarts: Vec<RestartRecord>,
    pub chosen_restart: Option<usize>,
    pub normalisation: String,
}

pub(crate) const NORMALISATION: &str =
    "X-block moments divide by the total weight (n, or the component mass); regression error covariances divide by the dataset's weight";

impl FitReport {
    pub(crate) fn single(family: &str, run: &RunOutcome) -> Self {
        FitReport {
            family: family.to_string(),
            components: run.components.len(),
            converged: run.converged,
            iterations: run.iterations,
            final_loglik: *run.trace.last().expect("at least one E-step"),
            loglik_trace: run.trace.clone(),
            guard_events: run.events.clone(),
            restarts: Vec::new(),
            chosen_restart: None,
            normalisation: NORMALISATION.to_string(),
        }
    }

    /// Closed-form fits run no iterations.
    pub fn closed_form(family: &str, loglik: f64) -> Self {
        FitReport {
            family: family.to_string(),
            components: 1,
            converged: true,
            iterations: 0,
            final_loglik: loglik,
            loglik_trace: vec![loglik],
            guard_events: Vec::new(),
            restarts: Vec::new(),
            chosen_restart: None,
            normalisation: "maximum-likelihood divisors (1/n, 1/n_A, 1/n_B)".to_string(),
        }
    }
}

/// One component's (μ, Σ[, δ]) during fitting.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Theta {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub delta: Option<DVector<f64>>,
    pub dims: BlockDims,
}

impl From<&GaussianParams> for Theta {
    fn from(g: &GaussianParams) -> Self {
        Theta {
            mu: g.mu.clone(),
            sigma: g.sigma.clone(),
            delta: None,
            dims: g.dims,
        }
    }
}

impl From<&SkewNormalParams> for Theta {
    fn from(p: &SkewNormalParams) -> Self {
        Theta {
            mu: p.mu.clone(),
            sigma: p.sigma.clone(),
            delta: Some(p.delta.clone()),
            dims: p.dims,
        }
    }
}

impl Theta {
    pub fn from_eta(eta: &EtaParams) -> Result<Self> {
        let (mu, sigma, delta, dims) = eta_to_theta(eta)?;
        Ok(Theta { mu, sigma, delta, dims })
    }

    pub fn density(&self, side: Side) -> Result<ObservedDensity> {
        ObservedDensity::new(&self.mu, &self.sigma, self.delta.as_ref(), self.dims, side)
    }

    pub fn to_gaussian(&self) -> GaussianParams {
        GaussianParams {
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
            dims: self.dims,
        }
    }

    pub fn to_skew(&self) -> SkewNormalParams {
        SkewNormalParams {
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
            delta: self.delta.clone().unwrap_or_else(|| DVector::zeros(self.dims.d())),
            dims: self.dims,
        }
    }
}

/// Responsibilities and latent moments from one pass over the rows.
pub(crate) struct EStep {
    pub loglik: f64,
    /// n × g, row-major.
    pub tau: Vec<f64>,
    /// g × n, component-major, so each component's column is a slice.
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn e_step(ds: &StackedDataset, comps: &[Theta], pi: &[f64]) -> Result<EStep> {
    let g = comps.len();
    let n = ds.n();
    let mut dens = Vec::with_capacity(g);
    for c in comps {
        dens.push([c.density(Side::A)?, c.density(Side::B)?]);
    }
    let ln_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    let skew = comps.iter().any(|c| c.delta.is_some());

    let mut tau = vec![0.0; n * g];
    let mut e1r = vec![0.0; n * g];
    let mut e2r = vec![0.0; n * g];
    let mut row_ll = vec![0.0; n];
    tau.par_chunks_mut(g)
        .zip(e1r.par_chunks_mut(g))
        .zip(e2r.par_chunks_mut(g))
        .zip(row_ll.par_iter_mut())
        .enumerate()
        .for_each(|(i, (((t, a), b), ll))| {
            let side = usize::from(ds.side(i) == Side::B);
            let row = ds.row(i);
            for h in 0..g {
                let d = &dens[h][side];
                let ev = d.eval(row);
                t[h] = ln_pi[h] + ev.ln_f;
                if skew {
                    let (m1, m2) = tn_moments(ev.m, d.c());
                    a[h] = m1;
                    b[h] = m2;
                }
            }
            let lse = log_sum_exp(t);
            *ll = lse;
            for v in t.iter_mut() {
                *v = (*v - lse).exp();
            }
        });

    let mut loglik = 0.0;
    for (i, &v) in row_ll.iter().enumerate() {
        if v == f64::NEG_INFINITY {
            return Err(FusionError::ZeroDensityRow { row: i });
        }
        if !v.is_finite() {
            return Err(FusionError::NonFiniteLikelihood { row: i });
        }
        loglik += v;
    }
    let transpose = |r: &[f64]| {
        let mut out = vec![0.0; n * g];
        for i in 0..n {
            for h in 0..g {
                out[h * n + i] = r[i * g + h];
            }
        }
        out
    };
    Ok(EStep {
        loglik,
        e1: transpose(&e1r),
        e2: transpose(&e2r),
        tau,
    })
}

/// Observed-data log-likelihood of a (possibly one-component) model.
pub(crate) fn loglik(ds: &StackedDataset, comps: &[Theta], pi: &[f64]) -> Result<f64> {
    Ok(e_step(ds, comps, pi)?.loglik)
}

pub(crate) struct RunOutcome {
    pub components: Vec<Theta>,
    pub pi: Vec<f64>,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub events: Vec<GuardEvent>,
}

/// Skew start from a Gaussian (μ̂, Σ̂): δ_j = sign(skew_j)·0.5·√Σ̂_jj using the
/// weighted third central moment of each observed column, then μ = μ̂ − √(2/π)δ.
pub(crate) fn skew_start(ds: &StackedDataset, w: &[f64], g: Theta) -> Theta {
    let dims = g.dims;
    let mut delta = DVector::zeros(dims.d());
    for j in 0..dims.d() {
        let rows = if j < dims.x {
            0..ds.n()
        } else if j < dims.x + dims.y {
            ds.rows_of(Side::A)
        } else {
            ds.rows_of(Side::B)
        };
        let (mut sw, mut s1) = (0.0, 0.0);
        for i in rows.clone() {
            sw += w[i];
            s1 += w[i] * ds.row(i)[j];
        }
        let mean = s1 / sw;
        let m3: f64 = rows.map(|i| w[i] * (ds.row(i)[j] - mean).powi(3)).sum();
        let sign = if m3 < 0.0 { -1.0 } else { 1.0 };
        delta[j] = sign * 0.5 * g.sigma[(j, j)].max(0.0).sqrt();
    }
    Theta {
        mu: &g.mu - &delta * FRAC_2_PI.sqrt(),
        sigma: g.sigma,
        delta: Some(delta),
        dims,
    }
}

fn floor_block(m: &mut DMatrix<f64>, name: &str, iteration: usize, h: usize, events: &mut Vec<GuardEvent>) {
    let k = m.nrows();
    let floor = 1e-8 * m.trace().max(0.0) / k as f64;
    let floor = if floor > 0.0 { floor } else { 1e-300 };
    if let Some(f) = floor_eigenvalues(m, floor) {
        events.push(GuardEvent {
            iteration,
            component: h,
            kind: "eigen-floor".into(),
            detail: format!("{name} eigenvalues raised to {floor:.3e}"),
        });
        *m = f;
    }
}

/// Largest skewness with δᵀΣ⁻¹δ below this keeps the posterior scale of U
/// above 1e-6.
const MAX_SKEW_S: f64 = 1e12;

fn skew_guard(theta: &mut Theta, iteration: usize, h: usize, events: &mut Vec<GuardEvent>) -> Result<()> {
    let Some(delta) = theta.delta.as_mut() else {
        return Ok(());
    };
    let ch = checked_cholesky(&theta.sigma, "Sigma").map_err(|_| FusionError::NotPositiveDefinite {
        what: "Sigma".into(),
        iteration,
    })?;
    let mut halvings = 0;
    loop {
        let s = delta.dot(&ch.solve(delta));
        if s.is_finite() && s < MAX_SKEW_S {
            break;
        }
        *delta *= 0.5;
        halvings += 1;
        if halvings > 200 {
            return Err(FusionError::InvalidParams("skewness could not be brought into range".into()));
        }
    }
    if halvings > 0 {
        events.push(GuardEvent {
            iteration,
            component: h,
            kind: "delta-shrink".into(),
            detail: format!("delta halved {halvings} time(s)"),
        });
    }
    Ok(())
}

/// One component's M-step from its weights (and latent moments).
pub(crate) fn m_step_component(
    ds: &StackedDataset,
    w: &[f64],
    lat: Option<Latent<'_>>,
    old: &Theta,
    mixture: bool,
    iteration: usize,
    h: usize,
    events: &mut Vec<GuardEvent>,
) -> Result<Theta> {
    let mut eta = match lat {
        None => gaussian_mstep(ds, w)?,
        Some(l) => {
            let dx_old = old.delta.as_ref().expect("skew component").rows(0, ds.dims().x).into_owned();
            let (mu, delta, sigma) = mstep::x_block_skew(ds, w, l, &dx_old);
            EtaParams {
                x: XBlock {
                    mu,
                    sigma,
                    delta: Some(delta),
                },
                y: mstep::regression(ds, Side::A, w, Some(l))?,
                z: mstep::regression(ds, Side::B, w, Some(l))?,
            }
        }
    };
    if mixture {
        floor_block(&mut eta.x.sigma, "Sigma_XX", iteration, h, events);
        floor_block(&mut eta.y.omega, "Omega_Y", iteration, h, events);
        floor_block(&mut eta.z.omega, "Omega_Z", iteration, h, events);
    } else {
        for (m, name) in [(&eta.x.sigma, "Sigma_XX"), (&eta.y.omega, "Omega_Y"), (&eta.z.omega, "Omega_Z")] {
            if crate::linalg::sym_rcond(m) < RCOND_MIN {
                return Err(FusionError::NotPositiveDefinite {
                    what: name.into(),
                    iteration,
                });
            }
        }
    }
    let mut theta = Theta::from_eta(&eta)?;
    skew_guard(&mut theta, iteration, h, events)?;
    Ok(theta)
}

/// Iterate E and M steps from the given components. With `mixture` set the
/// weights are re-estimated, eigenvalue floors apply and thin components are
/// reported as degenerate.
pub(crate) fn run_em(
    ds: &StackedDataset,
    mut comps: Vec<Theta>,
    mut pi: Vec<f64>,
    cfg: &EMConfig,
    mixture: bool,
) -> Result<RunOutcome> {
    let n = ds.n();
    let g = comps.len();
    let d = ds.dims().d();
    let mut trace = Vec::new();
    let mut events = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let es = e_step(ds, &comps, &pi)?;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (es.loglik - prev).abs() <= cfg.tol * prev.abs() {
                converged = true;
            }
        }
        trace.push(es.loglik);
        if converged || iterations == cfg.max_iters {
            return Ok(RunOutcome {
                components: comps,
                pi,
                trace,
                iterations,
                converged,
                events,
            });
        }
        iterations += 1;
        let mut next = Vec::with_capacity(g);
        let mut w = vec![0.0; n];
        for h in 0..g {
            for i in 0..n {
                w[i] = es.tau[i * g + h];
            }
            if mixture {
                check_mass(ds, &w, h, d)?;
            }
            let lat = comps[h].delta.as_ref().map(|_| Latent {
                e1: &es.e1[h * n..(h + 1) * n],
                e2: &es.e2[h * n..(h + 1) * n],
            });
            next.push(m_step_component(ds, &w, lat, &comps[h], mixture, iterations, h, &mut events)?);
        }
        if mixture {
            for (h, p) in pi.iter_mut().enumerate() {
                *p = (0..n).map(|i| es.tau[i * g + h]).sum::<f64>() / n as f64;
            }
        }
        comps = next;
    }
}

/// A component needs at least d + 1 effective rows overall, and enough in each
/// dataset to fit its regression.
pub(crate) fn check_mass(ds: &StackedDataset, w: &[f64], h: usize, d: usize) -> Result<()> {
    let dims = ds.dims();
    let total: f64 = w.iter().sum();
    let a: f64 = w[ds.rows_of(Side::A)].iter().sum();
    let b: f64 = w[ds.rows_of(Side::B)].iter().sum();
    let (mass, required) = if total < (d + 1) as f64 {
        (total, d + 1)
    } else if a < (dims.x + 2) as f64 {
        (a, dims.x + 2)
    } else if b < (dims.x + 2) as f64 {
        (b, dims.x + 2)
    } else {
        return Ok(());
    };
    Err(FusionError::DegenerateComponent {
        component: h,
        mass,
        required,
    })
}
