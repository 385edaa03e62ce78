//! TOML run configuration. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fusionkit::em::EMConfig;
use fusionkit::impute::DrawMode;
use fusionkit::nn::Search;
use fusionkit::simulation::Method;
use fusionkit::BlockSpec;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<DataSection>,
    pub blocks: Option<BlocksSection>,
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub em: EMConfig,
    pub impute: Option<ImputeSection>,
    pub simulate: Option<SimulateSection>,
    pub report: Option<ReportSection>,
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocksSection {
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub z: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// gaussian, skew-normal, gmm or snmix
    pub family: Option<String>,
    pub g: Option<usize>,
    /// Fitted model JSON read by `impute`.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputeMethod {
    Nn,
    #[default]
    Parametric,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeSection {
    pub method: ImputeMethod,
    pub draw_mode: DrawMode,
    pub hard_assignment: bool,
    pub standardize: bool,
    pub search: Search,
    /// Optional one-column CSV (header `label`) of per-row group labels for
    /// the summary, in stacked order.
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Builtin scenario name; ignored when `generator` is set.
    pub scenario: Option<String>,
    /// Model JSON to generate from instead of a builtin.
    pub generator: Option<PathBuf>,
    pub fit: Option<String>,
    pub g: Option<usize>,
    pub n_a: Option<usize>,
    pub n_b: Option<usize>,
    pub replications: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub draw_mode: Option<DrawMode>,
    pub standardize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub results: Option<PathBuf>,
    /// (source, y, z) samples written by `simulate`, binned into grids.
    pub samples: Option<PathBuf>,
    pub bins: Option<usize>,
    pub smooth: Option<usize>,
    pub min_rel: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Resolve and check that an input file exists.
    pub fn input(&self, p: &Path) -> Result<PathBuf> {
        let r = self.resolve(p);
        if !r.is_file() {
            bail!("input file {} does not exist", r.display());
        }
        Ok(r)
    }

    pub fn spec(&self) -> Result<BlockSpec> {
        let b = self.blocks.as_ref().context("config needs a [blocks] section")?;
        Ok(BlockSpec::new(b.x.clone(), b.y.clone(), b.z.clone())?)
    }

    pub fn data(&self) -> Result<(PathBuf, PathBuf)> {
        let d = self.data.as_ref().context("config needs a [data] section with `a` and `b`")?;
        Ok((self.input(&d.a)?, self.input(&d.b)?))
    }
}
