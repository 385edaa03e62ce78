//! Acceptance criteria. Each test prints one `criterion N ...: PASS|FAIL` line
//! with the measured values, then asserts.
//!
//! Run with `cargo test -p fusionkit --test acceptance -- --test-threads 1`.

use std::cell::RefCell;
use std::io::Write;
use std::rc::Rc;
use std::time::{Duration, Instant};

use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::BFGS;
use finitediff::FiniteDiff;
use fusionkit::em::InitStrategy;
use fusionkit::impute::asymptotic_nn_sample;
use fusionkit::mixtures::align_labels;
use fusionkit::simulation::{builtin, run_scenario, sample_joint, SimRecord};
use fusionkit::special::tn_moments;
use fusionkit::stats::{median, pearson};
use fusionkit::summary::{count_modes, MODE_BINS, MODE_MIN_REL, MODE_SMOOTH};
use fusionkit::truncnorm::tn_sample;
use fusionkit::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Written to the process stdout directly so the line shows even when the
/// harness captures test output.
fn report(n: u32, name: &str, pass: bool, detail: String, elapsed: Duration) {
    let line = format!(
        "criterion {n} {name}: {} ({detail}; {:.2}s)\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

/// Split complete rows into A (first n_a rows, X and Y) and B (X and Z).
fn split(w: &DMatrix<f64>, n_a: usize, dims: BlockDims) -> StackedDataset {
    let a_cols: Vec<usize> = dims.xr().chain(dims.yr()).collect();
    let b_cols: Vec<usize> = dims.xr().chain(dims.zr()).collect();
    let a = w.rows(0, n_a).select_columns(&a_cols);
    let b = w.rows(n_a, w.nrows() - n_a).select_columns(&b_cols);
    StackedDataset::from_canonical(&a, &b, &BlockSpec::generic(dims)).unwrap()
}

fn draw(model: &Model, n: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_joint(model, n, &mut rng).unwrap()
}

/// Σ with Σ_YZ set by the restriction, from regression pieces.
fn gaussian_from_regressions(
    mu_x: &[f64],
    l_xx: DMatrix<f64>,
    b_y: DMatrix<f64>,
    a_y: &[f64],
    o_y: DMatrix<f64>,
    b_z: DMatrix<f64>,
    a_z: &[f64],
    o_z: DMatrix<f64>,
) -> GaussianParams {
    let eta = EtaParams {
        x: XBlock {
            mu: DVector::from_row_slice(mu_x),
            sigma: &l_xx * l_xx.transpose(),
            delta: None,
        },
        y: RegressionBlock {
            alpha: DVector::from_row_slice(a_y),
            beta: b_y,
            omega: o_y,
            lambda: None,
        },
        z: RegressionBlock {
            alpha: DVector::from_row_slice(a_z),
            beta: b_z,
            omega: o_z,
            lambda: None,
        },
    };
    GaussianParams::from_eta(&eta).unwrap()
}

fn model_60() -> GaussianParams {
    gaussian_from_regressions(
        &[1.0, -0.5],
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.8]),
        DMatrix::from_row_slice(1, 2, &[0.7, -0.4]),
        &[2.0],
        DMatrix::from_element(1, 1, 0.25),
        DMatrix::from_row_slice(1, 2, &[-0.3, 0.9]),
        &[0.0],
        DMatrix::from_element(1, 1, 0.36),
    )
}

// ---------------------------------------------------------------- criterion 1

/// Negative factored log-likelihood over unconstrained parameters: μ_X,
/// Cholesky factors with log diagonals, and per-dataset intercept, slopes
/// and error Cholesky factor. Written from scratch for d_X = 2, d_Y = d_Z = 1.
#[derive(Clone)]
struct Factored {
    xa: Vec<[f64; 2]>,
    y: Vec<f64>,
    xb: Vec<[f64; 2]>,
    z: Vec<f64>,
    /// Lowest cost seen and where, kept across a pass that ends in error.
    best: Rc<RefCell<(f64, Vec<f64>)>>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl Factored {
    fn nll(&self, p: &[f64]) -> f64 {
        let (m1, m2) = (p[0], p[1]);
        let (l11, l21, l22) = (p[2].exp(), p[3], p[4].exp());
        let mut ll = 0.0;
        for x in self.xa.iter().chain(&self.xb) {
            // solve L v = x − μ
            let v1 = (x[0] - m1) / l11;
            let v2 = (x[1] - m2 - l21 * v1) / l22;
            ll += -LN_2PI - p[2] - p[4] - 0.5 * (v1 * v1 + v2 * v2);
        }
        let reg = |x: &[[f64; 2]], r: &[f64], q: &[f64]| {
            let s = q[3].exp();
            x.iter()
                .zip(r)
                .map(|(x, r)| {
                    let e = (r - q[0] - q[1] * x[0] - q[2] * x[1]) / s;
                    -0.5 * LN_2PI - q[3] - 0.5 * e * e
                })
                .sum::<f64>()
        };
        ll += reg(&self.xa, &self.y, &p[5..9]);
        ll += reg(&self.xb, &self.z, &p[9..13]);
        -ll
    }

    fn to_theta(p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let l = DMatrix::from_row_slice(2, 2, &[p[2].exp(), 0.0, p[3], p[4].exp()]);
        let sxx = &l * l.transpose();
        let mx = DVector::from_row_slice(&p[0..2]);
        let by = DMatrix::from_row_slice(1, 2, &p[6..8]);
        let bz = DMatrix::from_row_slice(1, 2, &p[10..12]);
        let my = p[5] + (&by * &mx)[0];
        let mz = p[9] + (&bz * &mx)[0];
        let sxy = &sxx * by.transpose();
        let sxz = &sxx * bz.transpose();
        let syy = (2.0 * p[8]).exp() + (&by * &sxx * by.transpose())[0];
        let szz = (2.0 * p[12]).exp() + (&bz * &sxx * bz.transpose())[0];
        let syz = (&by * &sxx * bz.transpose())[0];
        let mu = DVector::from_vec(vec![mx[0], mx[1], my, mz]);
        let s = DMatrix::from_row_slice(
            4,
            4,
            &[
                sxx[(0, 0)],
                sxx[(0, 1)],
                sxy[0],
                sxz[0],
                sxx[(1, 0)],
                sxx[(1, 1)],
                sxy[1],
                sxz[1],
                sxy[0],
                sxy[1],
                syy,
                syz,
                sxz[0],
                sxz[1],
                syz,
                szz,
            ],
        );
        (mu, s)
    }
}

impl CostFunction for Factored {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        // the BFGS update turns the iterate into NaN once steps vanish
        if p.iter().any(|v| !v.is_finite()) {
            return Err(argmin::core::Error::msg("non-finite parameters"));
        }
        let c = self.nll(p);
        let mut best = self.best.borrow_mut();
        if c < best.0 {
            *best = (c, p.clone());
        }
        Ok(c)
    }
}

impl Gradient for Factored {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;
    fn gradient(&self, p: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(p.central_diff(&|q: &Vec<f64>| self.nll(q)))
    }
}

#[test]
fn criterion_1_closed_form_matches_numerical_mle() {
    let truth = model_60();
    let (w, _) = draw(&Model::Gaussian(truth.clone()), 60, 60);
    let ds = split(&w, 30, truth.dims);

    let t0 = Instant::now();
    let fit = fit_gaussian(&ds).unwrap();
    let elapsed = t0.elapsed();

    let problem = Factored {
        xa: (0..30).map(|i| [w[(i, 0)], w[(i, 1)]]).collect(),
        y: (0..30).map(|i| w[(i, 2)]).collect(),
        xb: (30..60).map(|i| [w[(i, 0)], w[(i, 1)]]).collect(),
        z: (30..60).map(|i| w[(i, 3)]).collect(),
        best: Rc::new(RefCell::new((f64::INFINITY, Vec::new()))),
    };
    // crude start: marginal means and log standard deviations, zero slopes
    let mean_sd = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        (m, sd.ln())
    };
    let (x1, lx1) = mean_sd((0..60).map(|i| w[(i, 0)]).collect());
    let (x2, lx2) = mean_sd((0..60).map(|i| w[(i, 1)]).collect());
    let (my, ly) = mean_sd(problem.y.clone());
    let (mz, lz) = mean_sd(problem.z.clone());
    let p = vec![x1, x2, lx1, 0.0, lx2, my, 0.0, 0.0, ly, mz, 0.0, 0.0, lz];
    // Restart BFGS from the best point seen until a pass stops improving.
    // Passes end with an error once steps vanish and the inverse-Hessian
    // update divides by zero; the best point is kept regardless.
    *problem.best.borrow_mut() = (problem.nll(&p), p.clone());
    for _ in 0..50 {
        let before = problem.best.borrow().0;
        let solver = BFGS::new(MoreThuenteLineSearch::new())
            .with_tolerance_grad(1e-11)
            .unwrap()
            .with_tolerance_cost(0.0)
            .unwrap();
        let start = problem.best.borrow().1.clone();
        let run = Executor::new(problem.clone(), solver)
            .configure(|s| s.param(start).inv_hessian(identity13()).max_iters(200))
            .run();
        if run.is_err() && problem.best.borrow().0 >= before {
            break;
        }
        if problem.best.borrow().0 >= before {
            break;
        }
    }
    let p = problem.best.borrow().1.clone();
    let (mu, sigma) = Factored::to_theta(&p);
    let err_mu = (&mu - &fit.mu).amax();
    let err_sigma = (&sigma - &fit.sigma).amax();
    let err = err_mu.max(err_sigma);
    let pass = err <= 1e-6 && elapsed < Duration::from_secs(1);
    report(
        1,
        "closed-form Gaussian fit vs numerical maximiser",
        pass,
        format!("max |param diff| {err:.2e} (tol 1e-6), fit time {:.2e}s (limit 1s)", elapsed.as_secs_f64()),
        elapsed,
    );
    assert!(pass);
}

/// Initial inverse Hessian on the 1/n scale of a summed log-likelihood.
fn identity13() -> Vec<Vec<f64>> {
    (0..13).map(|i| (0..13).map(|j| if i == j { 1.0 / 60.0 } else { 0.0 }).collect()).collect()
}

// ---------------------------------------------------------------- criterion 2

fn sn_mixture_model() -> MixtureParams {
    let dims = BlockDims::new(1, 1, 1);
    let comp = |mu: [f64; 3], delta: [f64; 3]| {
        let g = gaussian_from_regressions(
            &[mu[0]],
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.6),
            &[mu[1]],
            DMatrix::from_element(1, 1, 0.2),
            DMatrix::from_element(1, 1, -0.4),
            &[mu[2]],
            DMatrix::from_element(1, 1, 0.3),
        );
        SkewNormalParams::new(g.mu, g.sigma, DVector::from_row_slice(&delta), dims).unwrap()
    };
    MixtureParams {
        pi: vec![0.4, 0.6],
        components: MixtureComponents::SkewNormal(vec![
            comp([-1.5, 0.0, 1.0], [0.5, 1.0, -0.5]),
            comp([1.5, 2.0, -1.0], [-0.4, 0.8, 0.6]),
        ]),
    }
}

#[test]
fn criterion_2_constraint_exact_for_every_family() {
    let t0 = Instant::now();
    let gen = Model::Mixture(sn_mixture_model());
    let (w, _) = draw(&gen, 1000, 2);
    let ds = split(&w, 500, BlockDims::new(1, 1, 1));
    let cfg = EMConfig {
        n_restarts: 3,
        seed: 2,
        ..EMConfig::default()
    };
    let (w2, _) = draw(&Model::Gaussian(model_60()), 600, 22);
    let ds2 = split(&w2, 300, BlockDims::new(2, 1, 1));
    let fits: Vec<(&str, f64)> = vec![
        ("gaussian", fit_gaussian(&ds2).unwrap().constraint_residual()),
        ("skew-normal", fit_skew_normal(&ds2, &cfg).unwrap().0.constraint_residual()),
        ("gmm", fit_gmm_matching(&ds, 2, &cfg).unwrap().0.constraint_residual()),
        ("snmix", fit_snmix_matching(&ds, 2, &cfg).unwrap().0.constraint_residual()),
    ];
    let worst = fits.iter().map(|f| f.1).fold(0.0, f64::max);
    let pass = worst <= 1e-10;
    let detail = fits.iter().map(|(n, r)| format!("{n} {r:.1e}")).collect::<Vec<_>>().join(", ");
    report(2, "identification constraint exactness", pass, format!("{detail} (tol 1e-10)"), t0.elapsed());
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_em_monotone_from_random_starts() {
    let t0 = Instant::now();
    let gen = Model::Mixture(sn_mixture_model());
    let (w, _) = draw(&gen, 2000, 3);
    let ds = split(&w, 1000, BlockDims::new(1, 1, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let base = SkewNormalParams::default_init(&ds).unwrap();
    let mut worst_drop: f64 = 0.0;
    let mut runs = 0;
    let mut errors = Vec::new();
    let mut check = |trace: &[f64]| {
        for k in 1..trace.len() {
            worst_drop = worst_drop.max(trace[k - 1] - trace[k]);
        }
    };
    for r in 0..50u64 {
        let cfg = EMConfig {
            n_restarts: 1,
            seed: 1000 + r,
            init_strategy: InitStrategy::Random,
            ..EMConfig::default()
        };
        let res = match r % 3 {
            0 => {
                let mut init = base.clone();
                for j in 0..3 {
                    init.mu[j] += 0.5 * rng.sample::<f64, _>(StandardNormal);
                    init.delta[j] = rng.sample(StandardNormal);
                }
                fit_sn_em(&ds, &init, &cfg).map(|(_, rep)| rep)
            }
            1 => fit_gmm_matching(&ds, 2, &cfg).map(|(_, rep)| rep),
            _ => fit_snmix_matching(&ds, 2, &cfg).map(|(_, rep)| rep),
        };
        match res {
            Ok(rep) => {
                check(&rep.loglik_trace);
                runs += 1;
            }
            Err(e) => errors.push(format!("run {r}: {e}")),
        }
    }
    let elapsed = t0.elapsed();
    let pass = errors.is_empty() && worst_drop <= 1e-8 && elapsed < Duration::from_secs(60);
    report(
        3,
        "EM monotonicity from 50 random starts",
        pass,
        format!(
            "{runs} runs, largest per-iteration decrease {worst_drop:.2e} (slack 1e-8), {} failed runs{}",
            errors.len(),
            errors.first().map(|e| format!(" [{e}]")).unwrap_or_default()
        ),
        elapsed,
    );
    assert!(pass);
}

// ------------------------------------------------------------ criteria 4 and 5

fn medians(records: &[SimRecord], method: &str, stat: &str) -> f64 {
    let v: Vec<f64> = records
        .iter()
        .filter(|r| r.method == method && r.statistic == stat)
        .map(|r| r.value)
        .collect();
    median(&v)
}

#[test]
fn criterion_4_skew_normal_simulation() {
    let t0 = Instant::now();
    let sc = builtin("sn-515").unwrap();
    let out = run_scenario(&sc, 0).unwrap();
    let elapsed = t0.elapsed();
    let nn = medians(&out.records, "nn", "rho_yz");
    let par = medians(&out.records, "parametric", "rho_yz");
    let truth = medians(&out.records, "truth", "rho_yz");
    let pass = (0.05..=0.25).contains(&nn)
        && (0.75..=0.92).contains(&par)
        && out.failures.is_empty()
        && elapsed < Duration::from_secs(120);
    report(
        4,
        "sn-515 correlation recovery",
        pass,
        format!(
            "truth {truth:.4}, median NN {nn:.4} (want [0.05, 0.25]), median parametric {par:.4} (want [0.75, 0.92]), {} failures",
            out.failures.len()
        ),
        elapsed,
    );
    assert!(pass);
}

/// E[2τ₁(X)τ₂(X)] under the gmm-overlap X marginal, by quadrature.
fn mismatch_probability() -> f64 {
    let phi = |x: f64, m: f64| (-(x - m) * (x - m) / (2.0 * 0.01)).exp() / (2.0 * std::f64::consts::PI * 0.01).sqrt();
    let f = |x: f64| {
        let (a, b) = (0.5 * phi(x, -0.1), 0.5 * phi(x, 0.1));
        let s = a + b;
        if s == 0.0 {
            0.0
        } else {
            2.0 * a * b / s
        }
    };
    quadrature::integrate(f, -2.0, 2.0, 1e-12).integral
}

#[test]
fn criterion_5_spurious_clusters() {
    let t0 = Instant::now();
    let sc = builtin("gmm-overlap").unwrap();
    let out = run_scenario(&sc, 0).unwrap();
    let oracle = mismatch_probability();
    let nn_rate = medians(&out.records, "nn", "cross_component_rate");
    let par_rate = medians(&out.records, "parametric", "cross_component_rate");
    let a = asymptotic_nn_sample(&sc.generator, 100_000, 5).unwrap();
    let y: Vec<f64> = a.values.column(1).iter().copied().collect();
    let z: Vec<f64> = a.values.column(2).iter().copied().collect();
    let modes = count_modes(&y, &z, MODE_BINS, MODE_SMOOTH, MODE_MIN_REL);
    let elapsed = t0.elapsed();
    let pass = (nn_rate - oracle).abs() <= 0.05 && modes >= 4 && par_rate < 0.05 && out.failures.is_empty();
    report(
        5,
        "gmm-overlap spurious clusters",
        pass,
        format!(
            "NN cross-component rate {nn_rate:.4} vs quadrature {oracle:.4} (tol 0.05), asymptotic (Y,Z) modes {modes} (want >= 4), parametric rate {par_rate:.4} (want < 0.05)"
        ),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 6

/// (E[U], E[U²]) of TN(m, c², 0) by quadrature in the standardised variable,
/// with the weight rescaled so its peak is 1.
fn tn_quadrature(m: f64, c: f64) -> (f64, f64) {
    let t = m / c;
    let lw = |v: f64| if t >= 0.0 { -0.5 * (v - t) * (v - t) } else { -0.5 * v * v + t * v };
    let hi = t.max(0.0) + 40.0;
    let tol = 1e-15;
    let (a, b) = if t < -1.0 {
        // nearly all mass lies in [0, 40/|t|]; split so the peak is resolved
        (40.0 / -t, hi)
    } else {
        (t.max(0.0), hi)
    };
    let moment = |k: i32| {
        let g = |v: f64| v.powi(k) * lw(v).exp();
        quadrature::integrate(g, 0.0, a, tol).integral + quadrature::integrate(g, a, b, tol).integral
    };
    let (z0, z1, z2) = (moment(0), moment(1), moment(2));
    (c * z1 / z0, c * c * z2 / z0)
}

#[test]
fn criterion_6_truncated_normal() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut at = (0.0, 0.0);
    for k in 0..=96 {
        let t = -40.0 + 0.5 * k as f64;
        for &c in &[0.3, 1.0, 2.0] {
            let (e1, e2) = tn_moments(t * c, c);
            let (q1, q2) = tn_quadrature(t * c, c);
            let r = ((e1 - q1) / q1).abs().max(((e2 - q2) / q2).abs());
            if r > worst {
                worst = r;
                at = (t, c);
            }
        }
    }
    let moments_ok = worst <= 1e-10;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 1_000_000;
    let mut sampling = Vec::new();
    let mut sampling_ok = true;
    for &(mean, var, lo) in &[(0.0, 1.0, 0.0), (2.0, 4.0, -1.0), (-5.0, 1.0, 0.0), (1.0, 0.25, 2.5)] {
        let spec = TruncatedNormalSpec::new(mean, var, lo).unwrap();
        let xs: Vec<f64> = (0..n).map(|_| tn_sample(&spec, &mut rng)).collect();
        let (em, ev) = spec.mean_var();
        let mu = xs.iter().sum::<f64>() / n as f64;
        let m2 = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64;
        let m4 = xs.iter().map(|x| (x - mu).powi(4)).sum::<f64>() / n as f64;
        let z_mean = (mu - em) / (m2 / n as f64).sqrt();
        let z_var = (m2 - ev) / ((m4 - m2 * m2) / n as f64).sqrt();
        let below = xs.iter().filter(|&&x| x < lo).count();
        let ok = z_mean.abs() <= 3.0 && z_var.abs() <= 3.0 && below == 0;
        sampling_ok &= ok;
        sampling.push(format!("TN({mean},{var},{lo}) z_mean {z_mean:.2} z_var {z_var:.2}"));
    }
    let pass = moments_ok && sampling_ok;
    report(
        6,
        "truncated-normal moments and sampler",
        pass,
        format!(
            "max rel error vs quadrature {worst:.1e} at t={},c={} (tol 1e-10); {}",
            at.0,
            at.1,
            sampling.join("; ")
        ),
        t0.elapsed(),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 7

/// Draws of (Y, Z) given X = x by rejection: U from its TN(0, 1, 0) prior,
/// accepted with probability exp(−½ qᵀΣ_XX⁻¹q), q = x − μ_X − δ_X u; then
/// (Y, Z) from the Gaussian law of W given X = x and U = u.
fn rejection_draws(p: &SkewNormalParams, x: &[f64], n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let dx = p.dims.x;
    let d = p.dims.d();
    let r = d - dx;
    let sxx = p.sigma.view((0, 0), (dx, dx)).into_owned();
    let sxx_inv = sxx.clone().try_inverse().unwrap();
    let srx = p.sigma.view((dx, 0), (r, dx)).into_owned();
    let gain = &srx * &sxx_inv;
    let cond = p.sigma.view((dx, dx), (r, r)).into_owned() - &gain * srx.transpose();
    let l = cond.cholesky().unwrap().unpack();
    let xv = DVector::from_row_slice(x);
    let mu_x = p.mu.rows(0, dx).into_owned();
    let d_x = p.delta.rows(0, dx).into_owned();
    let mu_r = p.mu.rows(dx, r).into_owned();
    let d_r = p.delta.rows(dx, r).into_owned();
    let mut out = DMatrix::zeros(n, r);
    let mut k = 0;
    while k < n {
        let u = rng.sample::<f64, _>(StandardNormal).abs();
        let q = &xv - &mu_x - &d_x * u;
        let accept = (-0.5 * (q.transpose() * &sxx_inv * &q)[0]).exp();
        if rng.random::<f64>() >= accept {
            continue;
        }
        let e = DVector::from_fn(r, |_, _| rng.sample(StandardNormal));
        let v = &mu_r + &d_r * u + &gain * &q + &l * e;
        out.row_mut(k).copy_from(&v.transpose());
        k += 1;
    }
    out
}

#[test]
fn criterion_7_conditional_skew_normal() {
    let t0 = Instant::now();
    let set_a = SkewNormalParams::new(
        DVector::from_vec(vec![0.5, -1.0, 2.0]),
        DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.3, 0.4, 1.5, 0.2, -0.3, 0.2, 0.8]),
        DVector::from_vec(vec![1.0, 2.0, -1.5]),
        BlockDims::new(1, 1, 1),
    )
    .unwrap();
    let set_b = SkewNormalParams::new(
        DVector::from_vec(vec![0.0, 1.0, -0.5, 0.3]),
        DMatrix::from_row_slice(
            4,
            4,
            &[1.2, 0.3, 0.2, -0.1, 0.3, 0.9, 0.1, 0.25, 0.2, 0.1, 1.0, 0.3, -0.1, 0.25, 0.3, 0.7],
        ),
        DVector::from_vec(vec![-1.0, 0.8, 2.0, 1.0]),
        BlockDims::new(2, 1, 1),
    )
    .unwrap();
    let cases: Vec<(&SkewNormalParams, Vec<f64>)> = vec![
        (&set_a, vec![0.0]),
        (&set_a, vec![1.5]),
        (&set_a, vec![-0.5]),
        (&set_b, vec![0.0, 1.0]),
        (&set_b, vec![-1.5, 1.5]),
        (&set_b, vec![0.5, 0.0]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 200_000;
    let mut worst_z: f64 = 0.0;
    for (p, x) in &cases {
        let c = p.conditional_sn(x).unwrap();
        let (mean, cov) = (c.mean(), c.covariance());
        let s = rejection_draws(p, x, n, &mut rng);
        let r = s.ncols();
        let nf = n as f64;
        let m: Vec<f64> = (0..r).map(|j| s.column(j).mean()).collect();
        for j in 0..r {
            let var = s.column(j).iter().map(|v| (v - m[j]).powi(2)).sum::<f64>() / nf;
            worst_z = worst_z.max(((m[j] - mean[j]) / (var / nf).sqrt()).abs());
            for k in j..r {
                let prods: Vec<f64> = (0..n).map(|i| (s[(i, j)] - m[j]) * (s[(i, k)] - m[k])).collect();
                let cjk = prods.iter().sum::<f64>() / nf;
                let vjk = prods.iter().map(|v| (v - cjk).powi(2)).sum::<f64>() / nf;
                worst_z = worst_z.max(((cjk - cov[(j, k)]) / (vjk / nf).sqrt()).abs());
            }
        }
    }
    let pass = worst_z <= 3.0;
    report(
        7,
        "conditional skew-normal vs rejection sampling",
        pass,
        format!("6 cases x (means + covariances), largest |z| {worst_z:.2} (limit 3)"),
        t0.elapsed(),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_asymptotic_nn_matches_nn() {
    let t0 = Instant::now();
    let sc = builtin("sn-515").unwrap();
    let n = 100_000;
    let a = asymptotic_nn_sample(&sc.generator, n, 8).unwrap();
    let rho_asym = pearson(
        &a.values.column(1).iter().copied().collect::<Vec<_>>(),
        &a.values.column(2).iter().copied().collect::<Vec<_>>(),
    );
    let (w, _) = draw(&sc.generator, n, 88);
    let ds = split(&w, n / 2, BlockDims::new(1, 1, 1));
    let imp = impute_nn(&ds, &NNConfig::default()).unwrap();
    let rho_nn = pearson(
        &imp.values.column(1).iter().copied().collect::<Vec<_>>(),
        &imp.values.column(2).iter().copied().collect::<Vec<_>>(),
    );
    let pass = (rho_asym - rho_nn).abs() <= 0.03;
    report(
        8,
        "asymptotic NN sampler vs NN imputation",
        pass,
        format!("rho asymptotic {rho_asym:.4}, rho NN {rho_nn:.4}, |diff| {:.4} (tol 0.03)", (rho_asym - rho_nn).abs()),
        t0.elapsed(),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_reductions() {
    let t0 = Instant::now();
    let dims = BlockDims::new(1, 1, 1);
    let gauss = gaussian_from_regressions(
        &[0.5],
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 0.8),
        &[1.0],
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::from_element(1, 1, -0.6),
        &[-1.0],
        DMatrix::from_element(1, 1, 0.7),
    );
    let (w, _) = draw(&Model::Gaussian(gauss.clone()), 10_000, 9);
    let ds = split(&w, 5000, dims);
    let g_fit = fit_gaussian(&ds).unwrap();
    let cfg = EMConfig::default();
    let (sn_fit, sn_rep) = fit_skew_normal(&ds, &cfg).unwrap();
    // Compare the fitted distributions through their mean and covariance.
    let sn_mean = sn_fit.mean();
    let sn_cov = sn_fit.covariance();
    let d_sn = (&sn_mean - &g_fit.mu).amax().max((&sn_cov - &g_fit.sigma).amax());
    let d_sn_params = (&sn_fit.mu - &g_fit.mu).amax().max((&sn_fit.sigma - &g_fit.sigma).amax());
    let sn_ok = d_sn <= 1e-3;
    let ll_sn = observed_loglik(&ds, &Model::SkewNormal(sn_fit.clone())).unwrap();
    let ll_g = observed_loglik(&ds, &Model::Gaussian(g_fit.clone())).unwrap();

    // g = 1 collapses
    let gm = fit_gmm_matching(&ds, 1, &cfg).unwrap().0;
    let MixtureComponents::Gaussian(gc) = &gm.components else { panic!() };
    let d_gmm = (&gc[0].mu - &g_fit.mu).amax().max((&gc[0].sigma - &g_fit.sigma).amax());

    let (w2, _) = draw(&Model::Mixture(sn_mixture_model()), 2000, 19);
    let ds2 = split(&w2, 1000, dims);
    let cfg1 = EMConfig {
        n_restarts: 1,
        ..EMConfig::default()
    };
    let sn1 = fit_skew_normal(&ds2, &cfg1).unwrap().0;
    let sm = fit_snmix_matching(&ds2, 1, &cfg1).unwrap().0;
    let MixtureComponents::SkewNormal(sc) = &sm.components else { panic!() };
    let d_snmix = (&sc[0].mu - &sn1.mu)
        .amax()
        .max((&sc[0].sigma - &sn1.sigma).amax())
        .max((&sc[0].delta - &sn1.delta).amax());
    let collapse_ok = d_gmm <= 1e-8 && d_snmix <= 1e-8;

    let pass = sn_ok && collapse_ok;
    report(
        9,
        "reductions",
        pass,
        format!(
            "SN fit on delta=0 data vs Gaussian fit: max |moment diff| {d_sn:.2e} (tol 1e-3; delta-hat {:?}, location/scale diff {d_sn_params:.2e}, {} iterations, converged {}, loglik SN {ll_sn:.3} vs Gaussian {ll_g:.3}); g=1 GMM vs Gaussian {d_gmm:.1e}, g=1 SN mixture vs SN {d_snmix:.1e} (tol 1e-8)",
            sn_fit.delta.as_slice().iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            sn_rep.iterations,
            sn_rep.converged
        ),
        t0.elapsed(),
    );
    assert!(pass);
}

#[test]
fn alignment_helper_inverts_permutations() {
    let refs = vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![5.0, 5.0])];
    let fitted = vec![refs[1].clone(), refs[0].clone()];
    assert_eq!(align_labels(&refs, &fitted), vec![1, 0]);
}
