//! Fitted models of every family, their observed-data likelihood and their
//! JSON form with named blocks.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{BlockDims, BlockSpec, StackedDataset};
use crate::em::{self, Theta};
use crate::error::{FusionError, Result};
use crate::gaussian::GaussianParams;
use crate::linalg::{block, segment};
use crate::mixtures::{MixtureComponents, MixtureParams};
use crate::skew_normal::SkewNormalParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Gaussian,
    SkewNormal,
    Gmm,
    Snmix,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::SkewNormal => "skew-normal",
            Family::Gmm => "gmm",
            Family::Snmix => "snmix",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "skew-normal" => Ok(Family::SkewNormal),
            "gmm" => Ok(Family::Gmm),
            "snmix" => Ok(Family::Snmix),
            other => Err(FusionError::Config(format!(
                "unknown model family `{other}` (expected gaussian, skew-normal, gmm or snmix)"
            ))),
        }
    }

    pub fn is_skew(self) -> bool {
        matches!(self, Family::SkewNormal | Family::Snmix)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Gaussian(GaussianParams),
    SkewNormal(SkewNormalParams),
    Mixture(MixtureParams),
}

impl From<GaussianParams> for Model {
    fn from(p: GaussianParams) -> Self {
        Model::Gaussian(p)
    }
}

impl From<SkewNormalParams> for Model {
    fn from(p: SkewNormalParams) -> Self {
        Model::SkewNormal(p)
    }
}

impl From<MixtureParams> for Model {
    fn from(p: MixtureParams) -> Self {
        Model::Mixture(p)
    }
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::Gaussian(_) => Family::Gaussian,
            Model::SkewNormal(_) => Family::SkewNormal,
            Model::Mixture(m) if m.is_skew() => Family::Snmix,
            Model::Mixture(_) => Family::Gmm,
        }
    }

    pub fn dims(&self) -> BlockDims {
        match self {
            Model::Gaussian(p) => p.dims,
            Model::SkewNormal(p) => p.dims,
            Model::Mixture(m) => m.dims(),
        }
    }

    pub(crate) fn parts(&self) -> (Vec<Theta>, Vec<f64>) {
        match self {
            Model::Gaussian(p) => (vec![Theta::from(p)], vec![1.0]),
            Model::SkewNormal(p) => (vec![Theta::from(p)], vec![1.0]),
            Model::Mixture(m) => (m.thetas(), m.pi.clone()),
        }
    }

    /// Largest relative constraint residual over components.
    pub fn constraint_residual(&self) -> f64 {
        match self {
            Model::Gaussian(p) => p.constraint_residual(),
            Model::SkewNormal(p) => p.constraint_residual(),
            Model::Mixture(m) => m.constraint_residual(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Gaussian(p) => crate::linalg::checked_cholesky(&p.sigma, "Sigma")
                .map(|_| ())
                .map_err(|e| FusionError::InvalidParams(e.to_string())),
            Model::SkewNormal(p) => p.validate(),
            Model::Mixture(m) => m.validate(),
        }
    }
}

/// Sum over A rows of the log (X, Y) marginal density plus, over B rows, the
/// log (X, Z) marginal density.
pub fn observed_loglik(ds: &StackedDataset, model: &Model) -> Result<f64> {
    if model.dims() != ds.dims() {
        return Err(FusionError::Dimension("model and data block sizes differ".into()));
    }
    model.validate()?;
    let (thetas, pi) = model.parts();
    em::loglik(ds, &thetas, &pi)
}

type Named = BTreeMap<String, serde_json::Value>;

fn vec_json(v: &DVector<f64>) -> serde_json::Value {
    serde_json::json!(v.as_slice())
}

fn mat_json(m: &DMatrix<f64>) -> serde_json::Value {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    serde_json::json!(rows)
}

fn component_json(mu: &DVector<f64>, sigma: &DMatrix<f64>, delta: Option<&DVector<f64>>, dims: BlockDims) -> Named {
    let mut out = Named::new();
    let blocks = [("X", dims.xr()), ("Y", dims.yr()), ("Z", dims.zr())];
    for (name, r) in &blocks {
        out.insert(format!("mu_{name}"), vec_json(&segment(mu, r.clone())));
        if let Some(d) = delta {
            out.insert(format!("delta_{name}"), vec_json(&segment(d, r.clone())));
        }
    }
    for (i, (a, ra)) in blocks.iter().enumerate() {
        for (b, rb) in &blocks[i..] {
            out.insert(format!("Sigma_{a}{b}"), mat_json(&block(sigma, ra.clone(), rb.clone())));
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    family: Family,
    g: usize,
    pi: Vec<f64>,
    blocks: BlockSpec,
    components: Vec<Named>,
}

/// JSON document for a fitted model.
pub fn model_to_json(model: &Model, spec: &BlockSpec) -> Result<String> {
    let (thetas, pi) = model.parts();
    let doc = ModelDoc {
        family: model.family(),
        g: pi.len(),
        pi,
        blocks: spec.clone(),
        components: thetas
            .iter()
            .map(|t| component_json(&t.mu, &t.sigma, t.delta.as_ref(), t.dims))
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn get<'a>(c: &'a Named, key: &str) -> Result<&'a serde_json::Value> {
    c.get(key).ok_or_else(|| FusionError::Schema(format!("component lacks `{key}`")))
}

fn read_vec(c: &Named, key: &str, len: usize) -> Result<DVector<f64>> {
    let v: Vec<f64> = serde_json::from_value(get(c, key)?.clone())?;
    if v.len() != len {
        return Err(FusionError::Schema(format!("`{key}` has length {}, expected {len}", v.len())));
    }
    Ok(DVector::from_vec(v))
}

fn read_mat(c: &Named, key: &str, r: usize, k: usize) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(get(c, key)?.clone())?;
    if rows.len() != r || rows.iter().any(|row| row.len() != k) {
        return Err(FusionError::Schema(format!("`{key}` is not {r}×{k}")));
    }
    Ok(DMatrix::from_fn(r, k, |i, j| rows[i][j]))
}

fn read_component(c: &Named, dims: BlockDims, skew: bool) -> Result<Theta> {
    let d = dims.d();
    let blocks = [("X", dims.xr()), ("Y", dims.yr()), ("Z", dims.zr())];
    let mut mu = DVector::zeros(d);
    let mut delta = DVector::zeros(d);
    let mut sigma = DMatrix::zeros(d, d);
    for (name, r) in &blocks {
        mu.rows_mut(r.start, r.len()).copy_from(&read_vec(c, &format!("mu_{name}"), r.len())?);
        if skew {
            delta
                .rows_mut(r.start, r.len())
                .copy_from(&read_vec(c, &format!("delta_{name}"), r.len())?);
        }
    }
    for (i, (a, ra)) in blocks.iter().enumerate() {
        for (b, rb) in &blocks[i..] {
            let m = read_mat(c, &format!("Sigma_{a}{b}"), ra.len(), rb.len())?;
            sigma.view_mut((ra.start, rb.start), (ra.len(), rb.len())).copy_from(&m);
            sigma.view_mut((rb.start, ra.start), (rb.len(), ra.len())).copy_from(&m.transpose());
        }
    }
    Ok(Theta {
        mu,
        sigma,
        delta: skew.then_some(delta),
        dims,
    })
}

/// Parse a model document; returns the model and the block names it was fitted on.
pub fn model_from_json(text: &str) -> Result<(Model, BlockSpec)> {
    let doc: ModelDoc = serde_json::from_str(text)?;
    let spec = BlockSpec::new(doc.blocks.x().to_vec(), doc.blocks.y().to_vec(), doc.blocks.z().to_vec())?;
    let dims = spec.dims();
    if doc.g != doc.pi.len() || doc.g != doc.components.len() || doc.g == 0 {
        return Err(FusionError::Schema(format!(
            "g = {} but {} weights and {} components",
            doc.g,
            doc.pi.len(),
            doc.components.len()
        )));
    }
    let skew = doc.family.is_skew();
    let thetas = doc
        .components
        .iter()
        .map(|c| read_component(c, dims, skew))
        .collect::<Result<Vec<_>>>()?;
    let model = match doc.family {
        Family::Gaussian | Family::SkewNormal if doc.g != 1 => {
            return Err(FusionError::Schema("single-component family with g ≠ 1".into()))
        }
        Family::Gaussian => Model::Gaussian(thetas[0].to_gaussian()),
        Family::SkewNormal => Model::SkewNormal(thetas[0].to_skew()),
        Family::Gmm | Family::Snmix => Model::Mixture(MixtureParams::from_thetas(doc.pi, &thetas, skew)),
    };
    model.validate()?;
    Ok((model, spec))
}

pub fn read_model(path: &Path) -> Result<(Model, BlockSpec)> {
    model_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_model(path: &Path, model: &Model, spec: &BlockSpec) -> Result<()> {
    std::fs::write(path, model_to_json(model, spec)? + "\n")?;
    Ok(())
}

impl MixtureComponents {
    pub fn len(&self) -> usize {
        match self {
            MixtureComponents::Gaussian(c) => c.len(),
            MixtureComponents::SkewNormal(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Each component's Gaussian-part mean μ.
    pub fn means(&self) -> Vec<DVector<f64>> {
        match self {
            MixtureComponents::Gaussian(c) => c.iter().map(|p| p.mu.clone()).collect(),
            MixtureComponents::SkewNormal(c) => c.iter().map(|p| p.mu.clone()).collect(),
        }
    }
}
