//! Log-densities of the observed marginal of one dataset's rows: (X, Y) for A
//! and (X, Z) for B. Precomputed once per parameter update, evaluated per row.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};

use crate::data::{BlockDims, Side};
use crate::error::{FusionError, Result};
use crate::linalg::{checked_cholesky, ln_det_chol, select_sym, select_vec, symmetrize};
use crate::special::{ln_std_normal_cdf, LN_SQRT_2PI};

#[derive(Clone, Debug)]
struct SkewPart {
    /// Λ_o⁻¹ δ_o, so that m = aᵀ(w − μ) is the posterior location of U.
    a: Vec<f64>,
    /// Posterior scale of U: √(1 − δ_oᵀ Λ_o⁻¹ δ_o).
    c: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct ObservedDensity {
    idx: Vec<usize>,
    mu: Vec<f64>,
    prec: Vec<f64>,
    ln_norm: f64,
    skew: Option<SkewPart>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct RowEval {
    pub ln_f: f64,
    /// Posterior location of U (zero for Gaussian models).
    pub m: f64,
}

impl ObservedDensity {
    pub fn new(
        mu: &DVector<f64>,
        sigma: &DMatrix<f64>,
        delta: Option<&DVector<f64>>,
        dims: BlockDims,
        side: Side,
    ) -> Result<Self> {
        let idx = dims.observed_indices(side);
        Self::on_indices(mu, sigma, delta, idx)
    }

    /// Density of the sub-vector on `idx` (indices into the full d-vector).
    pub fn on_indices(
        mu: &DVector<f64>,
        sigma: &DMatrix<f64>,
        delta: Option<&DVector<f64>>,
        idx: Vec<usize>,
    ) -> Result<Self> {
        let p = idx.len();
        let s_o = select_sym(sigma, &idx);
        let ch = checked_cholesky(&s_o, "observed covariance")?;
        let s_inv = symmetrize(&ch.inverse());
        let mut ln_det = ln_det_chol(&ch);
        let (prec, skew) = match delta {
            None => (s_inv, None),
            Some(delta) => {
                // Λ = Σ + δδᵀ handled by Sherman–Morrison so that
                // 1 − δᵀΛ⁻¹δ = 1/(1 + s) never cancels.
                let d_o = select_vec(delta, &idx);
                let sd = &s_inv * &d_o;
                let s = d_o.dot(&sd);
                if !s.is_finite() {
                    return Err(FusionError::InvalidParams("non-finite skewness".into()));
                }
                ln_det += s.ln_1p();
                let prec = symmetrize(&(&s_inv - &sd * sd.transpose() / (1.0 + s)));
                let a = (&sd / (1.0 + s)).as_slice().to_vec();
                (prec, Some(SkewPart { a, c: (1.0 + s).sqrt().recip() }))
            }
        };
        let ln_norm = -(p as f64) * LN_SQRT_2PI - 0.5 * ln_det;
        Ok(ObservedDensity {
            mu: select_vec(mu, &idx).as_slice().to_vec(),
            prec: prec.transpose().as_slice().to_vec(),
            idx,
            ln_norm,
            skew,
        })
    }

    /// Posterior scale of U; 1 for Gaussian models.
    pub fn c(&self) -> f64 {
        self.skew.as_ref().map_or(1.0, |s| s.c)
    }

    /// Evaluate at a full stacked row (length d).
    pub fn eval(&self, row: &[f64]) -> RowEval {
        let p = self.idx.len();
        let mut quad = 0.0;
        let mut m = 0.0;
        for j in 0..p {
            let dj = row[self.idx[j]] - self.mu[j];
            let mut s = 0.0;
            for k in 0..p {
                s += self.prec[j * p + k] * (row[self.idx[k]] - self.mu[k]);
            }
            quad += dj * s;
            if let Some(sk) = &self.skew {
                m += sk.a[j] * dj;
            }
        }
        let mut ln_f = self.ln_norm - 0.5 * quad;
        if let Some(sk) = &self.skew {
            ln_f += LN_2 + ln_std_normal_cdf(m / sk.c);
        }
        RowEval { ln_f, m }
    }

    /// Evaluate at a vector holding exactly the selected coordinates.
    pub fn eval_compact(&self, w: &[f64]) -> RowEval {
        let mut full = vec![0.0; self.idx.iter().max().map_or(0, |m| m + 1)];
        for (k, &j) in self.idx.iter().enumerate() {
            full[j] = w[k];
        }
        self.eval(&full)
    }
}
