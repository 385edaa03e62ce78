#![allow(dead_code)]

use fusionkit::simulation::sample_joint;
use fusionkit::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Split complete rows into A (first n_a rows, X and Y) and B (X and Z).
pub fn split(w: &DMatrix<f64>, n_a: usize, dims: BlockDims) -> StackedDataset {
    let a_cols: Vec<usize> = dims.xr().chain(dims.yr()).collect();
    let b_cols: Vec<usize> = dims.xr().chain(dims.zr()).collect();
    let a = w.rows(0, n_a).select_columns(&a_cols);
    let b = w.rows(n_a, w.nrows() - n_a).select_columns(&b_cols);
    StackedDataset::from_canonical(&a, &b, &BlockSpec::generic(dims)).unwrap()
}

pub fn draw(model: &Model, n: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_joint(model, n, &mut rng).unwrap()
}

pub fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

/// Gaussian θ with Σ_YZ replaced by the restriction.
pub fn random_gaussian(dims: BlockDims, rng: &mut ChaCha8Rng) -> GaussianParams {
    let d = dims.d();
    let mu = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma = random_spd(d, rng);
    let raw = GaussianParams { mu, sigma, dims };
    GaussianParams::from_eta(&raw.to_eta().unwrap()).unwrap()
}

/// Multivariate normal log-density on the `idx` coordinates, by Cholesky.
pub fn mvn_ln_pdf(w: &[f64], mu: &DVector<f64>, sigma: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let k = idx.len();
    let s = DMatrix::from_fn(k, k, |i, j| sigma[(idx[i], idx[j])]);
    let diff = DVector::from_fn(k, |i, _| w[i] - mu[idx[i]]);
    let chol = s.cholesky().unwrap();
    let sol = chol.solve(&diff);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + diff.dot(&sol))
}
