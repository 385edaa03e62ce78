//! Replicated matching experiments: generate two files from a known joint,
//! impute them by nearest neighbour and by a fitted model, and record the
//! resulting (Y, Z) statistics.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_2_PI, PI};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BlockDims, BlockSpec, ImputedDataset, StackedDataset};
use crate::em::{EMConfig, Theta};
use crate::error::{FusionError, Result};
use crate::gaussian::{fit_gaussian, GaussianParams};
use crate::impute::{asymptotic_nn_sample, impute_parametric, DrawMode, ImputationRequest};
use crate::linalg::checked_cholesky;
use crate::mixtures::{align_labels, fit_gmm_matching, fit_snmix_matching, MixtureComponents, MixtureParams};
use crate::model::{Family, Model};
use crate::nn::{impute_nn, NNConfig};
use crate::skew_normal::{fit_skew_normal, SkewNormalParams};
use crate::stats::{iqr, median};
use crate::summary::summarize;
use crate::truncnorm::std_tn_sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Nn,
    Parametric,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nn => "nn",
            Method::Parametric => "parametric",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub generator: Model,
    pub n_a: usize,
    pub n_b: usize,
    pub replications: usize,
    pub methods: Vec<Method>,
    /// Family fitted for parametric imputation, and its component count.
    pub fit: Family,
    pub g: usize,
    pub em: EMConfig,
    pub draw_mode: DrawMode,
    pub nn: NNConfig,
}

pub const BUILTIN_SCENARIOS: &[&str] = &["sn-515", "gmm-overlap"];

/// Named presets:
/// - `sn-515`: skew-normal with μ = 0, Σ = I, δ = (1, 3, 5), 500 + 500 rows,
///   skew-normal fit, 20 replications.
/// - `gmm-overlap`: equal-weight Gaussian mixture with means (−0.1, 0, 0) and
///   (0.1, 1, 1), covariance 0.01·I, 500 + 500 rows, two-component fit,
///   20 replications.
pub fn builtin(name: &str) -> Option<Scenario> {
    let dims = BlockDims::new(1, 1, 1);
    let base = |generator: Model, fit: Family, g: usize| Scenario {
        name: name.to_string(),
        generator,
        n_a: 500,
        n_b: 500,
        replications: 20,
        methods: vec![Method::Nn, Method::Parametric],
        fit,
        g,
        em: EMConfig::default(),
        draw_mode: DrawMode::PosteriorDraw,
        nn: NNConfig::default(),
    };
    match name {
        "sn-515" => {
            let p = SkewNormalParams::new(
                DVector::zeros(3),
                DMatrix::identity(3, 3),
                DVector::from_vec(vec![1.0, 3.0, 5.0]),
                dims,
            )
            .ok()?;
            Some(base(Model::SkewNormal(p), Family::SkewNormal, 1))
        }
        "gmm-overlap" => {
            let comp = |m: [f64; 3]| GaussianParams {
                mu: DVector::from_row_slice(&m),
                sigma: DMatrix::identity(3, 3) * 0.01,
                dims,
            };
            let mix = MixtureParams {
                pi: vec![0.5, 0.5],
                components: MixtureComponents::Gaussian(vec![comp([-0.1, 0.0, 0.0]), comp([0.1, 1.0, 1.0])]),
            };
            Some(base(Model::Mixture(mix), Family::Gmm, 2))
        }
        _ => None,
    }
}

/// Draw `n` complete rows from any model, with the generating component of
/// each row (always 0 for single-component models).
pub fn sample_joint<R: Rng + ?Sized>(model: &Model, n: usize, rng: &mut R) -> Result<(DMatrix<f64>, Vec<usize>)> {
    model.validate()?;
    let (thetas, pi) = model.parts();
    let chols = thetas
        .iter()
        .map(|t| checked_cholesky(&t.sigma, "Sigma").map(|c| c.unpack()))
        .collect::<Result<Vec<_>>>()?;
    let d = model.dims().d();
    let mut out = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let h = if pi.len() == 1 { 0 } else { pick(&pi, rng) };
        let t = &thetas[h];
        let mut w = &t.mu + &chols[h] * DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
        if let Some(delta) = &t.delta {
            w += delta * std_tn_sample(0.0, rng);
        }
        out.row_mut(i).copy_from(&w.transpose());
        labels.push(h);
    }
    Ok((out, labels))
}

fn pick<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (h, &w) in p.iter().enumerate() {
        if u < w {
            return h;
        }
        u -= w;
    }
    p.len() - 1
}

/// Mean and covariance of one component, skew part included.
fn component_moments(t: &Theta) -> (DVector<f64>, DMatrix<f64>) {
    match &t.delta {
        Some(d) => (&t.mu + d * FRAC_2_PI.sqrt(), &t.sigma + d * d.transpose() * (1.0 - 2.0 / PI)),
        None => (t.mu.clone(), t.sigma.clone()),
    }
}

/// Population mean and covariance of a model.
pub fn model_moments(model: &Model) -> (DVector<f64>, DMatrix<f64>) {
    let (thetas, pi) = model.parts();
    let d = model.dims().d();
    let mut mean = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for (t, p) in thetas.iter().zip(&pi) {
        let (m, c) = component_moments(t);
        second += (c + &m * m.transpose()) * *p;
        mean += m * *p;
    }
    let cov = second - &mean * mean.transpose();
    (mean, cov)
}

fn rho_statistics(model: &Model, spec: &BlockSpec) -> Vec<(String, f64)> {
    let (_, cov) = model_moments(model);
    let dims = spec.dims();
    let single = dims.y == 1 && dims.z == 1;
    let mut out = Vec::new();
    for (a, yj) in dims.yr().enumerate() {
        for (b, zk) in dims.zr().enumerate() {
            let name = if single {
                "rho_yz".to_string()
            } else {
                format!("rho_yz:{}~{}", spec.y()[a], spec.z()[b])
            };
            out.push((name, cov[(yj, zk)] / (cov[(yj, yj)] * cov[(zk, zk)]).sqrt()));
        }
    }
    out
}

/// One line of the long-format results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub replication: usize,
    pub method: String,
    pub statistic: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub method: String,
    pub error: String,
}

/// (Y, Z) pairs of the first replication, by source, for density grids.
#[derive(Clone, Debug, PartialEq)]
pub struct YzSample {
    pub source: String,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct SimulationOutput {
    pub records: Vec<SimRecord>,
    pub failures: Vec<ReplicationFailure>,
    pub samples: Vec<YzSample>,
}

fn fit_model(ds: &StackedDataset, sc: &Scenario, seed: u64) -> Result<Model> {
    let cfg = EMConfig { seed, ..sc.em.clone() };
    Ok(match sc.fit {
        Family::Gaussian => Model::Gaussian(fit_gaussian(ds)?),
        Family::SkewNormal => Model::SkewNormal(fit_skew_normal(ds, &cfg)?.0),
        Family::Gmm => Model::Mixture(fit_gmm_matching(ds, sc.g, &cfg)?.0),
        Family::Snmix => Model::Mixture(fit_snmix_matching(ds, sc.g, &cfg)?.0),
    })
}

fn first_yz(imp: &ImputedDataset, source: &str) -> YzSample {
    let dims = imp.spec.dims();
    YzSample {
        source: source.into(),
        y: imp.values.column(dims.yr().start).iter().copied().collect(),
        z: imp.values.column(dims.zr().start).iter().copied().collect(),
    }
}

struct RepResult {
    records: Vec<SimRecord>,
    failures: Vec<ReplicationFailure>,
    samples: Vec<YzSample>,
}

fn run_replication(sc: &Scenario, spec: &BlockSpec, seed: u64, r: usize) -> RepResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    let mut out = RepResult {
        records: Vec::new(),
        failures: Vec::new(),
        samples: Vec::new(),
    };
    let fail = |out: &mut RepResult, method: &str, e: FusionError| {
        out.failures.push(ReplicationFailure {
            replication: r,
            method: method.into(),
            error: e.to_string(),
        });
        out.records.push(SimRecord {
            replication: r,
            method: method.into(),
            statistic: "failed".into(),
            value: 1.0,
        });
    };
    let push = |out: &mut RepResult, method: &str, stat: &str, value: f64| {
        out.records.push(SimRecord {
            replication: r,
            method: method.into(),
            statistic: stat.into(),
            value,
        })
    };
    for (stat, v) in rho_statistics(&sc.generator, spec) {
        push(&mut out, "truth", &stat, v);
    }

    let dims = spec.dims();
    let generated = sample_joint(&sc.generator, sc.n_a + sc.n_b, &mut rng).and_then(|(w, labels)| {
        let a_cols: Vec<usize> = dims.xr().chain(dims.yr()).collect();
        let b_cols: Vec<usize> = dims.xr().chain(dims.zr()).collect();
        let a = w.rows(0, sc.n_a).select_columns(&a_cols);
        let b = w.rows(sc.n_a, sc.n_b).select_columns(&b_cols);
        Ok((StackedDataset::from_canonical(&a, &b, spec)?, w, labels))
    });
    let (ds, full, labels) = match generated {
        Ok(v) => v,
        Err(e) => {
            fail(&mut out, "generate", e);
            return out;
        }
    };
    let fit_seed: u64 = rng.random();
    let impute_seed: u64 = rng.random();
    let asym_seed: u64 = rng.random();
    let mixture_truth = labels.iter().any(|&l| l > 0);
    if r == 0 {
        out.samples.push(YzSample {
            source: "truth".into(),
            y: full.column(dims.yr().start).iter().copied().collect(),
            z: full.column(dims.zr().start).iter().copied().collect(),
        });
    }

    for &m in &sc.methods {
        let name = m.as_str();
        let result = match m {
            Method::Nn => impute_nn(&ds, &sc.nn).map(|imp| {
                let cross = mixture_truth.then(|| {
                    let k = (0..imp.n()).filter(|&i| imp.donors[i].is_some_and(|d| labels[d] != labels[i])).count();
                    k as f64 / imp.n() as f64
                });
                (imp, cross)
            }),
            Method::Parametric => fit_model(&ds, sc, fit_seed).and_then(|model| {
                let req = ImputationRequest {
                    seed: impute_seed,
                    draw_mode: sc.draw_mode,
                    hard_assignment: false,
                };
                let imp = impute_parametric(&ds, &model, &req)?;
                let cross = match (&model, &sc.generator) {
                    (Model::Mixture(fit), Model::Mixture(truth)) if mixture_truth && fit.g() == truth.g() => {
                        // fitted index aligned with each true component
                        let align = align_labels(&truth.components.means(), &fit.components.means());
                        let mut to_true = vec![0; fit.g()];
                        for (t, &f) in align.iter().enumerate() {
                            to_true[f] = t;
                        }
                        let used = imp.components.iter().filter(|c| c.is_some()).count();
                        let k = (0..imp.n())
                            .filter(|&i| imp.components[i].is_some_and(|c| to_true[c] != labels[i]))
                            .count();
                        (used > 0).then(|| k as f64 / used as f64)
                    }
                    _ => None,
                };
                if r == 0 {
                    if let Ok(a) = asymptotic_nn_sample(&model, sc.n_a + sc.n_b, asym_seed) {
                        out_samples_push(&mut out.samples, "asymptotic-fitted", &a.values, dims);
                    }
                }
                Ok((imp, cross))
            }),
        };
        match result.and_then(|(imp, cross)| Ok((summarize(&imp, None)?, imp, cross))) {
            Ok((summary, imp, cross)) => {
                for g in &summary.groups {
                    let stat = match g.group.split_once(':') {
                        Some((_, pair)) => format!("rho_yz:{pair}"),
                        None => "rho_yz".to_string(),
                    };
                    push(&mut out, name, &stat, g.rho_yz);
                }
                if let Some(c) = cross {
                    push(&mut out, name, "cross_component_rate", c);
                }
                if r == 0 {
                    out.samples.push(first_yz(&imp, name));
                }
            }
            Err(e) => fail(&mut out, name, e),
        }
    }
    if r == 0 {
        if let Ok(a) = asymptotic_nn_sample(&sc.generator, sc.n_a + sc.n_b, asym_seed) {
            out_samples_push(&mut out.samples, "asymptotic-nn", &a.values, dims);
        }
    }
    out
}

fn out_samples_push(samples: &mut Vec<YzSample>, source: &str, values: &DMatrix<f64>, dims: BlockDims) {
    samples.push(YzSample {
        source: source.into(),
        y: values.column(dims.yr().start).iter().copied().collect(),
        z: values.column(dims.zr().start).iter().copied().collect(),
    });
}

/// Run every replication in parallel. Replication r draws from stream r of
/// `seed`, so results are in replication order and independent of
/// scheduling. Stage failures are recorded and the run continues.
pub fn run_scenario(sc: &Scenario, seed: u64) -> Result<SimulationOutput> {
    if sc.replications == 0 {
        return Err(FusionError::Config("replication count must be at least 1".into()));
    }
    if sc.n_a == 0 || sc.n_b == 0 {
        return Err(FusionError::Config("both files need at least one row".into()));
    }
    sc.em.validate()?;
    let spec = BlockSpec::generic(sc.generator.dims());
    let reps: Vec<RepResult> = (0..sc.replications)
        .into_par_iter()
        .map(|r| run_replication(sc, &spec, seed, r))
        .collect();
    let mut out = SimulationOutput::default();
    for rep in reps {
        out.records.extend(rep.records);
        out.failures.extend(rep.failures);
        out.samples.extend(rep.samples);
    }
    Ok(out)
}

const RESULT_HEADER: [&str; 4] = ["replication", "method", "statistic", "value"];

pub fn write_results_csv(records: &[SimRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULT_HEADER)?;
    for r in records {
        w.write_record([
            r.replication.to_string(),
            r.method.clone(),
            r.statistic.clone(),
            format!("{:.16e}", r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<SimRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != RESULT_HEADER {
        return Err(FusionError::Schema(format!(
            "{}: expected columns {:?}, found {:?}",
            path.display(),
            RESULT_HEADER,
            header
        )));
    }
    let mut out = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| {
            FusionError::Schema(format!("{}: row {}: bad `{col}` value", path.display(), k + 1))
        };
        if rec.len() != 4 {
            return Err(bad("record length"));
        }
        out.push(SimRecord {
            replication: rec[0].trim().parse().map_err(|_| bad("replication"))?,
            method: rec[1].trim().to_string(),
            statistic: rec[2].trim().to_string(),
            value: rec[3].trim().parse().map_err(|_| bad("value"))?,
        });
    }
    Ok(out)
}

pub fn write_samples_csv(samples: &[YzSample], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["source", "y", "z"])?;
    for s in samples {
        for (y, z) in s.y.iter().zip(&s.z) {
            w.write_record([s.source.clone(), format!("{y:.16e}"), format!("{z:.16e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<YzSample>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != ["source", "y", "z"] {
        return Err(FusionError::Schema(format!("{}: expected columns source,y,z", path.display())));
    }
    let mut by: BTreeMap<String, YzSample> = BTreeMap::new();
    let mut order = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| FusionError::Schema(format!("{}: row {}: bad number", path.display(), k + 1)))
        };
        let (y, z) = (parse(&rec[1])?, parse(&rec[2])?);
        let e = by.entry(rec[0].to_string()).or_insert_with(|| {
            order.push(rec[0].to_string());
            YzSample {
                source: rec[0].to_string(),
                y: Vec::new(),
                z: Vec::new(),
            }
        });
        e.y.push(y);
        e.z.push(z);
    }
    Ok(order.into_iter().filter_map(|k| by.remove(&k)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub statistic: String,
    pub n: usize,
    pub median: f64,
    pub iqr: f64,
}

/// Median and IQR of each (method, statistic) pair, sorted by statistic
/// then method.
pub fn aggregate(records: &[SimRecord]) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(FusionError::Schema("results table has no rows".into()));
    }
    let mut by: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        by.entry((r.statistic.clone(), r.method.clone())).or_default().push(r.value);
    }
    Ok(by
        .into_iter()
        .map(|((statistic, method), v)| AggregateRow {
            method,
            statistic,
            n: v.len(),
            median: median(&v),
            iqr: iqr(&v),
        })
        .collect())
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "statistic", "n", "median", "iqr"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.statistic.clone(),
            r.n.to_string(),
            format!("{:.16e}", r.median),
            format!("{:.16e}", r.iqr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table: one row per statistic, one column per method, each
/// cell "median (IQR)".
pub fn render_table(rows: &[AggregateRow]) -> String {
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    let mut stats: Vec<&str> = rows.iter().map(|r| r.statistic.as_str()).collect();
    stats.dedup();
    let cell = |s: &str, m: &str| {
        rows.iter()
            .find(|r| r.statistic == s && r.method == m)
            .map(|r| format!("{:.3} ({:.3})", r.median, r.iqr))
            .unwrap_or_else(|| "-".into())
    };
    let mut grid: Vec<Vec<String>> = vec![std::iter::once("statistic".to_string())
        .chain(methods.iter().map(|m| m.to_string()))
        .collect()];
    for s in &stats {
        grid.push(std::iter::once(s.to_string()).chain(methods.iter().map(|m| cell(s, m))).collect());
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (k, row) in grid.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if k == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}
