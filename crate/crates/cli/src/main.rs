use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fusionkit::data::{emit_csv, load_csv};
use fusionkit::model::{read_model, write_model};
use fusionkit::simulation::{self, Scenario};
use fusionkit::summary::{
    count_modes, histogram2d, summarize, write_summary_csv, write_summary_json, MODE_BINS, MODE_MIN_REL, MODE_SMOOTH,
};
use fusionkit::{
    fit_gaussian, fit_gmm_matching, fit_skew_normal, fit_snmix_matching, impute_nn, impute_parametric, observed_loglik,
    Family, FitReport, FusionError, ImputationRequest, Model, NNConfig, Side, StackedDataset,
};
use serde_json::json;

mod config;

use config::{ImputeMethod, RunConfig};

#[derive(Parser)]
#[command(name = "fusionkit", version, about = "Statistical matching of two files sharing common variables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to the two files and write model.json and fit_report.json.
    Fit(Common),
    /// Fill the missing blocks and write imputed.csv, provenance.csv and summaries.
    Impute(Common),
    /// Run a replicated experiment and write results.csv.
    Simulate(Common),
    /// Aggregate results.csv into a table and density grids.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`, default ".".
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Ctx {
    cfg: RunConfig,
    seed: Option<u64>,
    out: PathBuf,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self> {
        let cfg = RunConfig::load(&c.config)?;
        let seed = c.seed.or(cfg.seed);
        let out = match (&c.out, &cfg.out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => cfg.resolve(o),
            (None, None) => PathBuf::from("."),
        };
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Ctx { cfg, seed, out })
    }

    fn seed(&self, what: &str) -> Result<u64> {
        self.seed.with_context(|| format!("{what} needs a seed (--seed or `seed` in the config)"))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn dataset(&self) -> Result<StackedDataset> {
        let spec = self.cfg.spec()?;
        let (a, b) = self.cfg.data()?;
        let ta = load_csv(&a, &spec, Side::A)?;
        let tb = load_csv(&b, &spec, Side::B)?;
        Ok(StackedDataset::stack(&ta, &tb, &spec)?)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn family_of(cfg: &RunConfig) -> Result<(Family, usize)> {
    let m = cfg.model.as_ref().context("config needs a [model] section")?;
    let family = Family::parse(m.family.as_deref().context("[model] needs `family`")?)?;
    let g = match family {
        Family::Gmm | Family::Snmix => m.g.context("mixture families need `g` in [model]")?,
        _ => 1,
    };
    Ok((family, g))
}

fn cmd_fit(c: &Common) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let (family, g) = family_of(&ctx.cfg)?;
    let ds = ctx.dataset()?;
    let mut em = ctx.cfg.em.clone();
    if let Some(s) = ctx.seed {
        em.seed = s;
    }
    em.validate()?;
    let (model, report): (Model, FitReport) = match family {
        Family::Gaussian => {
            let p = fit_gaussian(&ds)?;
            let model = Model::Gaussian(p);
            let ll = observed_loglik(&ds, &model)?;
            (model, FitReport::closed_form("gaussian", ll))
        }
        Family::SkewNormal => {
            let (p, r) = fit_skew_normal(&ds, &em)?;
            (p.into(), r)
        }
        Family::Gmm => {
            let (p, r) = fit_gmm_matching(&ds, g, &em)?;
            (p.into(), r)
        }
        Family::Snmix => {
            let (p, r) = fit_snmix_matching(&ds, g, &em)?;
            (p.into(), r)
        }
    };
    write_model(&ctx.path("model.json"), &model, ds.spec())?;
    write_json(&ctx.path("fit_report.json"), &report)?;
    Ok(())
}

fn read_labels(path: &Path, n: usize) -> Result<Vec<String>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let labels: Vec<String> = rd
        .records()
        .map(|r| r.map(|r| r.get(0).unwrap_or("").trim().to_string()))
        .collect::<std::result::Result<_, _>>()?;
    if labels.len() != n {
        return Err(FusionError::Dimension(format!("{} labels for {n} rows", labels.len())).into());
    }
    Ok(labels)
}

fn cmd_impute(c: &Common) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let ds = ctx.dataset()?;
    let sec = ctx.cfg.impute.as_ref().context("config needs an [impute] section")?;
    let imp = match sec.method {
        ImputeMethod::Nn => impute_nn(
            &ds,
            &NNConfig {
                standardize: sec.standardize,
                search: sec.search,
            },
        )?,
        ImputeMethod::Parametric => {
            let path = ctx
                .cfg
                .model
                .as_ref()
                .and_then(|m| m.path.as_ref())
                .context("parametric imputation needs `path` in [model]")?;
            let (model, model_spec) = read_model(&ctx.cfg.input(path)?)?;
            if &model_spec != ds.spec() {
                return Err(FusionError::Dimension(format!(
                    "model columns {:?} do not match data columns {:?}",
                    model_spec.columns(),
                    ds.spec().columns()
                ))
                .into());
            }
            let req = ImputationRequest {
                seed: ctx.seed("parametric imputation")?,
                draw_mode: sec.draw_mode,
                hard_assignment: sec.hard_assignment,
            };
            impute_parametric(&ds, &model, &req)?
        }
    };
    let labels = match &sec.labels {
        Some(p) => Some(read_labels(&ctx.cfg.input(p)?, ds.n())?),
        None => None,
    };
    emit_csv(&imp, &ctx.path("imputed.csv"), &ctx.path("provenance.csv"))?;
    let summary = summarize(&imp, labels.as_deref())?;
    write_summary_csv(&summary, &ctx.path("summary.csv"))?;
    write_summary_json(&summary, &ctx.path("summary.json"))?;
    Ok(())
}

fn scenario(cfg: &RunConfig) -> Result<Scenario> {
    let sec = cfg.simulate.as_ref().context("config needs a [simulate] section")?;
    let mut sc = match (&sec.generator, &sec.scenario) {
        (Some(path), _) => {
            let (generator, _) = read_model(&cfg.input(path)?)?;
            let fit = Family::parse(sec.fit.as_deref().context("a custom generator needs `fit`")?)?;
            let g = match fit {
                Family::Gmm | Family::Snmix => sec.g.context("mixture fits need `g`")?,
                _ => 1,
            };
            let mut sc = simulation::builtin("sn-515").expect("builtin exists");
            sc.name = "custom".into();
            sc.generator = generator;
            sc.fit = fit;
            sc.g = g;
            sc
        }
        (None, Some(name)) => match simulation::builtin(name) {
            Some(sc) => sc,
            None => bail!(
                "unknown scenario `{name}`; builtins are {}",
                simulation::BUILTIN_SCENARIOS.join(", ")
            ),
        },
        (None, None) => bail!("[simulate] needs `scenario` or `generator`"),
    };
    if let Some(v) = sec.n_a {
        sc.n_a = v;
    }
    if let Some(v) = sec.n_b {
        sc.n_b = v;
    }
    if let Some(v) = sec.replications {
        sc.replications = v;
    }
    if let Some(v) = &sec.methods {
        sc.methods = v.clone();
    }
    if let Some(v) = sec.draw_mode {
        sc.draw_mode = v;
    }
    if let Some(v) = sec.standardize {
        sc.nn.standardize = v;
    }
    sc.em = cfg.em.clone();
    Ok(sc)
}

fn cmd_simulate(c: &Common) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let seed = ctx.seed("simulate")?;
    let sc = scenario(&ctx.cfg)?;
    let out = simulation::run_scenario(&sc, seed)?;
    simulation::write_results_csv(&out.records, &ctx.path("results.csv"))?;
    simulation::write_samples_csv(&out.samples, &ctx.path("samples.csv"))?;
    write_json(&ctx.path("failures.json"), &out.failures)?;
    Ok(())
}

fn cmd_report(c: &Common) -> Result<()> {
    let ctx = Ctx::new(c)?;
    let sec = ctx.cfg.report.as_ref().context("config needs a [report] section")?;
    let results = ctx.cfg.input(sec.results.as_ref().context("[report] needs `results`")?)?;
    let records = simulation::read_results_csv(&results)?;
    let rows = simulation::aggregate(&records)?;
    let table = simulation::render_table(&rows);
    simulation::write_aggregate_csv(&rows, &ctx.path("aggregate.csv"))?;
    std::fs::write(ctx.path("report.txt"), &table)?;
    print!("{table}");
    if let Some(p) = &sec.samples {
        let samples = simulation::read_samples_csv(&ctx.cfg.input(p)?)?;
        let bins = sec.bins.unwrap_or(MODE_BINS);
        let smooth = sec.smooth.unwrap_or(MODE_SMOOTH);
        let min_rel = sec.min_rel.unwrap_or(MODE_MIN_REL);
        if bins == 0 {
            return Err(FusionError::Config("bins must be at least 1".into()).into());
        }
        let mut modes = serde_json::Map::new();
        for s in &samples {
            histogram2d(&s.y, &s.z, bins, None).write_csv(&ctx.path(&format!("grid_{}.csv", s.source)))?;
            modes.insert(s.source.clone(), json!(count_modes(&s.y, &s.z, bins, smooth, min_rel)));
        }
        write_json(&ctx.path("modes.json"), &modes)?;
    }
    Ok(())
}

/// 2 for bad inputs, 3 for numerical failures.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<FusionError>()) {
        Some(f) if f.is_numerical() => 3,
        _ => 2,
    }
}

fn kind(e: &anyhow::Error) -> &'static str {
    match e.chain().find_map(|c| c.downcast_ref::<FusionError>()) {
        Some(f) if f.is_numerical() => "numerical",
        _ => "validation",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Fit(c) => cmd_fit(c),
        Command::Impute(c) => cmd_impute(c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::Report(c) => cmd_report(c),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let msg = json!({
                "error": kind(&e),
                "message": format!("{e:#}"),
                "exit_code": code,
            });
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}
