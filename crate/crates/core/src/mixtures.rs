//! Finite mixtures of constrained Gaussian or skew-normal components, each
//! satisfying Σ_YZ^(h) = Σ_YX^(h) [Σ_XX^(h)]⁻¹ Σ_XZ^(h).

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::min_cost_assignment;
use crate::data::{BlockDims, Side, StackedDataset};
use crate::em::{self, EMConfig, FitReport, InitStrategy, RestartRecord, RunOutcome, Theta};
use crate::error::{FusionError, Result};
use crate::gaussian::{check_rows, GaussianParams};
use crate::skew_normal::SkewNormalParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "components", rename_all = "kebab-case")]
pub enum MixtureComponents {
    Gaussian(Vec<GaussianParams>),
    SkewNormal(Vec<SkewNormalParams>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub pi: Vec<f64>,
    pub components: MixtureComponents,
}

/// Posterior class probabilities, n × g.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    pub tau: DMatrix<f64>,
}

impl Responsibilities {
    /// Most probable component of each row, lowest index on ties.
    pub fn hard(&self) -> Vec<usize> {
        (0..self.tau.nrows())
            .map(|i| {
                let row = self.tau.row(i);
                let mut best = 0;
                for h in 1..row.len() {
                    if row[h] > row[best] {
                        best = h;
                    }
                }
                best
            })
            .collect()
    }
}

impl MixtureParams {
    pub fn g(&self) -> usize {
        self.pi.len()
    }

    pub fn dims(&self) -> BlockDims {
        match &self.components {
            MixtureComponents::Gaussian(c) => c[0].dims,
            MixtureComponents::SkewNormal(c) => c[0].dims,
        }
    }

    pub fn is_skew(&self) -> bool {
        matches!(self.components, MixtureComponents::SkewNormal(_))
    }

    pub(crate) fn thetas(&self) -> Vec<Theta> {
        match &self.components {
            MixtureComponents::Gaussian(c) => c.iter().map(Theta::from).collect(),
            MixtureComponents::SkewNormal(c) => c.iter().map(Theta::from).collect(),
        }
    }

    pub(crate) fn from_thetas(pi: Vec<f64>, thetas: &[Theta], skew: bool) -> Self {
        let components = if skew {
            MixtureComponents::SkewNormal(thetas.iter().map(Theta::to_skew).collect())
        } else {
            MixtureComponents::Gaussian(thetas.iter().map(Theta::to_gaussian).collect())
        };
        MixtureParams { pi, components }
    }

    /// (μ, Σ) of each component's Gaussian part.
    pub fn sigmas(&self) -> Vec<&DMatrix<f64>> {
        match &self.components {
            MixtureComponents::Gaussian(c) => c.iter().map(|p| &p.sigma).collect(),
            MixtureComponents::SkewNormal(c) => c.iter().map(|p| &p.sigma).collect(),
        }
    }

    /// Largest component-wise relative constraint residual.
    pub fn constraint_residual(&self) -> f64 {
        let dims = self.dims();
        self.sigmas()
            .into_iter()
            .map(|s| crate::linalg::constraint_residual(s, dims))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.pi.len();
        let n_comp = match &self.components {
            MixtureComponents::Gaussian(c) => c.len(),
            MixtureComponents::SkewNormal(c) => c.len(),
        };
        if g == 0 || n_comp != g {
            return Err(FusionError::InvalidParams(format!("{g} weights for {n_comp} components")));
        }
        if self.pi.iter().any(|p| !(*p > 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(FusionError::InvalidParams("mixing weights must be positive and sum to 1".into()));
        }
        let dims = self.dims();
        for t in self.thetas() {
            if t.dims != dims {
                return Err(FusionError::InvalidParams("components disagree on block sizes".into()));
            }
            crate::linalg::checked_cholesky(&t.sigma, "component Sigma")
                .map_err(|e| FusionError::InvalidParams(e.to_string()))?;
        }
        Ok(())
    }
}

/// τ_{i,h} ∝ π_h f_h(observed part of row i), computed in log space. A rows
/// use the (X, Y) marginal of each component, B rows the (X, Z) marginal.
pub fn posterior_class_probs(ds: &StackedDataset, params: &MixtureParams) -> Result<Responsibilities> {
    params.validate()?;
    if params.dims() != ds.dims() {
        return Err(FusionError::Dimension("model and data block sizes differ".into()));
    }
    let es = em::e_step(ds, &params.thetas(), &params.pi)?;
    Ok(Responsibilities {
        tau: DMatrix::from_row_slice(ds.n(), params.g(), &es.tau),
    })
}

pub fn fit_gmm_matching(ds: &StackedDataset, g: usize, config: &EMConfig) -> Result<(MixtureParams, FitReport)> {
    fit_mixture(ds, g, config, false)
}

pub fn fit_snmix_matching(ds: &StackedDataset, g: usize, config: &EMConfig) -> Result<(MixtureParams, FitReport)> {
    fit_mixture(ds, g, config, true)
}

fn fit_mixture(ds: &StackedDataset, g: usize, cfg: &EMConfig, skew: bool) -> Result<(MixtureParams, FitReport)> {
    cfg.validate()?;
    check_rows(ds)?;
    if g == 0 {
        return Err(FusionError::Config("mixtures need at least one component".into()));
    }
    let runs: Vec<Result<RunOutcome>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let (comps, pi) = initial_components(ds, g, cfg.init_strategy, skew, &mut rng)?;
            em::run_em(ds, comps, pi, cfg, true)
        })
        .collect();

    let mut records = Vec::with_capacity(runs.len());
    let mut best: Option<usize> = None;
    let mut last_err = String::new();
    for (r, run) in runs.iter().enumerate() {
        match run {
            Ok(out) => {
                let ll = *out.trace.last().expect("at least one E-step");
                records.push(RestartRecord {
                    index: r,
                    final_loglik: Some(ll),
                    iterations: out.iterations,
                    converged: out.converged,
                    note: None,
                });
                let better = match best {
                    None => true,
                    Some(b) => ll > *runs[b].as_ref().expect("kept only ok runs").trace.last().expect("nonempty"),
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => {
                last_err = e.to_string();
                records.push(RestartRecord {
                    index: r,
                    final_loglik: None,
                    iterations: 0,
                    converged: false,
                    note: Some(format!("abandoned: {e}")),
                });
            }
        }
    }
    let Some(b) = best else {
        return Err(FusionError::AllRestartsFailed(cfg.n_restarts, last_err));
    };
    let out = runs[b].as_ref().expect("best run succeeded");
    let family = if skew { "snmix" } else { "gmm" };
    let mut report = FitReport::single(family, out);
    report.restarts = records;
    report.chosen_restart = Some(b);
    Ok((MixtureParams::from_thetas(out.pi.clone(), &out.components, skew), report))
}

/// Hard responsibilities from the chosen clustering, turned into starting
/// components by one weighted M-step.
pub(crate) fn initial_components<R: Rng>(
    ds: &StackedDataset,
    g: usize,
    strategy: InitStrategy,
    skew: bool,
    rng: &mut R,
) -> Result<(Vec<Theta>, Vec<f64>)> {
    let labels = initial_labels(ds, g, strategy, rng);
    let n = ds.n();
    let d = ds.dims().d();
    let mut comps = Vec::with_capacity(g);
    let mut pi = Vec::with_capacity(g);
    let mut w = vec![0.0; n];
    let mut events = Vec::new();
    for h in 0..g {
        for i in 0..n {
            w[i] = if labels[i] == h { 1.0 } else { 0.0 };
        }
        em::check_mass(ds, &w, h, d)?;
        let theta = em::m_step_component(ds, &w, None, &Theta::from(&GaussianParams::standard(ds.dims())), true, 0, h, &mut events)?;
        let theta = if skew { em::skew_start(ds, &w, theta) } else { theta };
        comps.push(theta);
        pi.push(w.iter().sum::<f64>() / n as f64);
    }
    Ok((comps, pi))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centres: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (k, c) in centres.iter().enumerate() {
        let dd = sq_dist(p, c);
        if dd < bd {
            bd = dd;
            best = k;
        }
    }
    best
}

/// k-means on the given points; returns labels and centres.
fn kmeans<R: Rng>(pts: &[Vec<f64>], k: usize, strategy: InitStrategy, rng: &mut R) -> (Vec<usize>, Vec<Vec<f64>>) {
    let n = pts.len();
    let mut centres: Vec<Vec<f64>> = match strategy {
        InitStrategy::Random => sample(rng, n, k.min(n)).into_iter().map(|i| pts[i].clone()).collect(),
        InitStrategy::KmeansPlusPlus => {
            let mut c = vec![pts[rng.random_range(0..n)].clone()];
            let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &c[0])).collect();
            while c.len() < k {
                let total: f64 = d2.iter().sum();
                let next = if total > 0.0 {
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = n - 1;
                    for (i, v) in d2.iter().enumerate() {
                        if u < *v {
                            pick = i;
                            break;
                        }
                        u -= v;
                    }
                    pick
                } else {
                    rng.random_range(0..n)
                };
                c.push(pts[next].clone());
                for (i, p) in pts.iter().enumerate() {
                    d2[i] = d2[i].min(sq_dist(p, &c[c.len() - 1]));
                }
            }
            c
        }
    };
    while centres.len() < k {
        centres.push(centres[0].clone());
    }
    let mut labels: Vec<usize> = pts.iter().map(|p| nearest(p, &centres)).collect();
    if strategy == InitStrategy::Random {
        return (labels, centres);
    }
    for _ in 0..100 {
        let dim = pts[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in pts.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for h in 0..k {
            if counts[h] > 0 {
                centres[h] = sums[h].iter().map(|s| s / counts[h] as f64).collect();
            }
        }
        let next: Vec<usize> = pts.iter().map(|p| nearest(p, &centres)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    (labels, centres)
}

/// Cluster A on (X, Y) and B on (X, Z), then relabel B's clusters to the A
/// cluster with the closest X centroid.
fn initial_labels<R: Rng>(ds: &StackedDataset, g: usize, strategy: InitStrategy, rng: &mut R) -> Vec<usize> {
    let dx = ds.dims().x;
    let points = |side: Side| -> Vec<Vec<f64>> {
        ds.rows_of(side)
            .map(|i| ds.x(i).iter().chain(ds.own(i)).copied().collect())
            .collect()
    };
    let (la, ca) = kmeans(&points(Side::A), g, strategy, rng);
    let (lb, cb) = kmeans(&points(Side::B), g, strategy, rng);
    let cost = DMatrix::from_fn(g, g, |a, b| sq_dist(&ca[a][..dx], &cb[b][..dx]));
    let a_to_b = min_cost_assignment(&cost);
    let mut b_to_a = vec![0; g];
    for (a, &b) in a_to_b.iter().enumerate() {
        b_to_a[b] = a;
    }
    la.into_iter().chain(lb.into_iter().map(|l| b_to_a[l])).collect()
}

/// Order `fitted` components to best match `reference` by squared distance
/// between component means: `result[k]` is the fitted index aligned with
/// reference component k.
pub fn align_labels(reference: &[nalgebra::DVector<f64>], fitted: &[nalgebra::DVector<f64>]) -> Vec<usize> {
    let g = reference.len();
    let cost = DMatrix::from_fn(g, g, |r, f| (&reference[r] - &fitted[f]).norm_squared());
    min_cost_assignment(&cost)
}
