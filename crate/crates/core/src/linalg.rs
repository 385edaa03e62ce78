//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::data::BlockDims;
use crate::error::{FusionError, Result};

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_MIN: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// λ_min/λ_max of a symmetric matrix; 0 when it is not positive definite.
pub fn sym_rcond(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let max = ev.max();
    let min = ev.min();
    if !(max > 0.0) || !(min > 0.0) {
        return 0.0;
    }
    min / max
}

/// Cholesky factor after checking the condition number.
pub fn checked_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let rcond = sym_rcond(m);
    if !(rcond >= RCOND_MIN) {
        return Err(FusionError::Singular {
            what: what.to_string(),
            rcond,
        });
    }
    Cholesky::new(symmetrize(m)).ok_or_else(|| FusionError::Singular {
        what: what.to_string(),
        rcond,
    })
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = checked_cholesky(m, what)?.inverse();
    Ok(symmetrize(&inv))
}

pub fn ln_det_chol(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Raise every eigenvalue to at least `floor`. Returns `None` when nothing
/// needed changing.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return None;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    Some(symmetrize(&(q * DMatrix::from_diagonal(&clipped) * q.transpose())))
}

pub fn block(m: &DMatrix<f64>, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
    m.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned()
}

pub fn segment(v: &DVector<f64>, r: std::ops::Range<usize>) -> DVector<f64> {
    v.rows(r.start, r.len()).into_owned()
}

/// Principal submatrix on the given index set.
pub fn select_sym(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Relative Frobenius distance between Σ_YZ and Σ_YX Σ_XX⁻¹ Σ_XZ, scaled by
/// ‖Σ_YX‖‖Σ_XX⁻¹‖‖Σ_XZ‖ (floored at the smallest positive normal) so the
/// measure is invariant to rescaling each block.
pub fn constraint_residual(sigma: &DMatrix<f64>, dims: BlockDims) -> f64 {
    let sxx = block(sigma, dims.xr(), dims.xr());
    let syx = block(sigma, dims.yr(), dims.xr());
    let sxz = block(sigma, dims.xr(), dims.zr());
    let syz = block(sigma, dims.yr(), dims.zr());
    let Some(inv) = sxx.clone().try_inverse() else {
        return f64::INFINITY;
    };
    let implied = &syx * &inv * &sxz;
    let scale = syx.norm() * inv.norm() * sxz.norm();
    (syz - implied).norm() / scale.max(f64::MIN_POSITIVE)
}
