//! Weighted closed-form M-step pieces shared by the single-model and mixture
//! fits. Weights index stacked rows; a single fit passes all ones.

use nalgebra::{DMatrix, DVector};

use crate::data::{Side, StackedDataset};
use crate::error::{FusionError, Result};
use crate::gaussian::RegressionBlock;
use crate::linalg::{sym_rcond, symmetrize, RCOND_MIN};

/// Per-row posterior moments E[U | obs] and E[U² | obs].
#[derive(Clone, Copy)]
pub(crate) struct Latent<'a> {
    pub e1: &'a [f64],
    pub e2: &'a [f64],
}

fn add_outer(acc: &mut DMatrix<f64>, w: f64, a: &[f64], b: &[f64]) {
    for (i, ai) in a.iter().enumerate() {
        let wa = w * ai;
        for (j, bj) in b.iter().enumerate() {
            acc[(i, j)] += wa * bj;
        }
    }
}

/// Weighted mean and 1/W covariance of X over every row.
pub(crate) fn x_block_gaussian(ds: &StackedDataset, w: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let dx = ds.dims().x;
    let mut total = 0.0;
    let mut mu = DVector::zeros(dx);
    for i in 0..ds.n() {
        total += w[i];
        for (k, v) in ds.x(i).iter().enumerate() {
            mu[k] += w[i] * v;
        }
    }
    mu /= total;
    let mut sigma = DMatrix::zeros(dx, dx);
    let mut r = vec![0.0; dx];
    for i in 0..ds.n() {
        for (k, v) in ds.x(i).iter().enumerate() {
            r[k] = v - mu[k];
        }
        add_outer(&mut sigma, w[i], &r, &r);
    }
    (mu, symmetrize(&(sigma / total)))
}

/// Conditional maximisation of the skew-normal X block in the order μ, δ, Σ,
/// each using the freshest values of the others.
pub(crate) fn x_block_skew(
    ds: &StackedDataset,
    w: &[f64],
    lat: Latent<'_>,
    delta_old: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let dx = ds.dims().x;
    let n = ds.n();
    let mut total = 0.0;
    let mut mu = DVector::zeros(dx);
    for i in 0..n {
        total += w[i];
        for (k, v) in ds.x(i).iter().enumerate() {
            mu[k] += w[i] * (v - lat.e1[i] * delta_old[k]);
        }
    }
    mu /= total;

    let mut num = DVector::zeros(dx);
    let mut den = 0.0;
    for i in 0..n {
        den += w[i] * lat.e2[i];
        for (k, v) in ds.x(i).iter().enumerate() {
            num[k] += w[i] * lat.e1[i] * (v - mu[k]);
        }
    }
    let delta = num / den;

    let mut sigma = DMatrix::zeros(dx, dx);
    let mut var_u = 0.0;
    let mut r = vec![0.0; dx];
    for i in 0..n {
        for (k, v) in ds.x(i).iter().enumerate() {
            r[k] = v - mu[k] - lat.e1[i] * delta[k];
        }
        add_outer(&mut sigma, w[i], &r, &r);
        var_u += w[i] * (lat.e2[i] - lat.e1[i] * lat.e1[i]);
    }
    sigma += &delta * delta.transpose() * var_u;
    (mu, delta, symmetrize(&(sigma / total)))
}

/// Weighted regression of a dataset's own block on X, with the latent U as an
/// extra regressor when `latent` is given. Solved from centred normal
/// equations; E[U²] enters through Var(U | obs) on the U diagonal.
pub(crate) fn regression(
    ds: &StackedDataset,
    side: Side,
    w: &[f64],
    latent: Option<Latent<'_>>,
) -> Result<RegressionBlock> {
    let rows = ds.rows_of(side);
    let dx = ds.dims().x;
    let k = ds.own(rows.start).len();
    let off = usize::from(latent.is_some());
    let q = dx + off;

    let mut total = 0.0;
    let mut xbar = vec![0.0; dx];
    let mut ybar = vec![0.0; k];
    let mut ubar = 0.0;
    for i in rows.clone() {
        let wi = w[i];
        total += wi;
        for (a, v) in xbar.iter_mut().zip(ds.x(i)) {
            *a += wi * v;
        }
        for (a, v) in ybar.iter_mut().zip(ds.own(i)) {
            *a += wi * v;
        }
        if let Some(l) = latent {
            ubar += wi * l.e1[i];
        }
    }
    if !(total > 0.0) {
        return Err(FusionError::RankDeficient { dataset: side.tag() });
    }
    xbar.iter_mut().for_each(|v| *v /= total);
    ybar.iter_mut().for_each(|v| *v /= total);
    ubar /= total;

    let mut scc = DMatrix::zeros(q, q);
    let mut scy = DMatrix::zeros(q, k);
    let mut var_u = 0.0;
    let mut c = vec![0.0; q];
    let mut r = vec![0.0; k];
    for i in rows.clone() {
        if let Some(l) = latent {
            c[0] = l.e1[i] - ubar;
            var_u += w[i] * (l.e2[i] - l.e1[i] * l.e1[i]);
        }
        for (j, v) in ds.x(i).iter().enumerate() {
            c[off + j] = v - xbar[j];
        }
        for (j, v) in ds.own(i).iter().enumerate() {
            r[j] = v - ybar[j];
        }
        add_outer(&mut scc, w[i], &c, &c);
        add_outer(&mut scy, w[i], &c, &r);
    }
    if latent.is_some() {
        scc[(0, 0)] += var_u;
    }
    let scc = symmetrize(&scc);
    if sym_rcond(&scc) < RCOND_MIN {
        return Err(FusionError::RankDeficient { dataset: side.tag() });
    }
    let coef = scc
        .cholesky()
        .ok_or(FusionError::RankDeficient { dataset: side.tag() })?
        .solve(&scy);

    let beta = coef.rows(off, dx).transpose();
    let lambda = latent.map(|_| coef.row(0).transpose());
    let xbar = DVector::from_vec(xbar);
    let mut alpha = DVector::from_vec(ybar) - &beta * &xbar;
    if let Some(l) = &lambda {
        alpha -= l * ubar;
    }

    let mut omega = DMatrix::zeros(k, k);
    for i in rows {
        let x = ds.x(i);
        let u = latent.map_or(0.0, |l| l.e1[i]);
        for (j, v) in ds.own(i).iter().enumerate() {
            let mut fit = alpha[j];
            for (m, xv) in x.iter().enumerate() {
                fit += beta[(j, m)] * xv;
            }
            if let Some(l) = &lambda {
                fit += l[j] * u;
            }
            r[j] = v - fit;
        }
        add_outer(&mut omega, w[i], &r, &r);
    }
    if let Some(l) = &lambda {
        omega += l * l.transpose() * var_u;
    }
    Ok(RegressionBlock {
        alpha,
        beta,
        omega: symmetrize(&(omega / total)),
        lambda,
    })
}
