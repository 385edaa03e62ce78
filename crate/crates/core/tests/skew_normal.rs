mod common;

use common::{draw, split};
use fusionkit::special::tn_moments;
use fusionkit::stats::mean_cov;
use fusionkit::truncnorm::tn_sample;
use fusionkit::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sn(mu: &[f64], sigma: DMatrix<f64>, delta: &[f64]) -> SkewNormalParams {
    SkewNormalParams::new(
        DVector::from_row_slice(mu),
        sigma,
        DVector::from_row_slice(delta),
        BlockDims::new(1, 1, 1),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn posterior_variance_is_positive_and_bounded(m in -40.0f64..8.0, c in 0.05f64..5.0) {
        let (e1, e2) = tn_moments(m, c);
        // e2 − e1² cancels when m/c is large; allow rounding on the scale of e2
        let v = e2 - e1 * e1;
        let slack = 8.0 * f64::EPSILON * e2;
        prop_assert!(e1 > 0.0);
        prop_assert!(v > -slack && v <= c * c + slack, "v = {v}, c² = {}", c * c);
    }

    #[test]
    fn posterior_mean_increases_with_m(m in -39.0f64..7.0, step in 1e-3f64..1.0, c in 0.1f64..3.0) {
        prop_assert!(tn_moments(m + step, c).0 > tn_moments(m, c).0);
    }
}

#[test]
fn density_integrates_to_one() {
    let p = sn(
        &[0.0, 0.5, -0.5],
        DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 0.8, 0.2, 0.0, 0.2, 0.6]),
        &[0.7, -0.5, 0.4],
    );
    let f = |a: f64, b: f64, c: f64| p.density(&[a, b, c]).unwrap();
    let inner = |a: f64, b: f64| quadrature::integrate(|c| f(a, b, c), -9.0, 9.0, 1e-9).integral;
    let mid = |a: f64| quadrature::integrate(|b| inner(a, b), -9.0, 9.0, 1e-9).integral;
    let total = quadrature::integrate(mid, -9.0, 9.0, 1e-9).integral;
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn zero_skew_sample_moments_approach_parameters() {
    let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.4, 2.0, 0.1, -0.2, 0.1, 0.5]);
    let p = sn(&[1.0, -2.0, 0.5], sigma.clone(), &[0.0, 0.0, 0.0]);
    let n = 100_000;
    let w = p.sample(n, 11).unwrap();
    let (m, c) = mean_cov(&w);
    for j in 0..3 {
        let se = (sigma[(j, j)] / n as f64).sqrt();
        assert!((m[j] - p.mu[j]).abs() < 3.0 * se);
        for k in 0..3 {
            // var of a sample covariance ≈ (σ_jj σ_kk + σ_jk²)/n
            let se = ((sigma[(j, j)] * sigma[(k, k)] + sigma[(j, k)].powi(2)) / n as f64).sqrt();
            assert!((c[(j, k)] - sigma[(j, k)]).abs() < 3.0 * se, "({j},{k})");
        }
    }
}

#[test]
fn skewed_sample_mean_shifts_by_delta_times_half_normal_mean() {
    let p = sn(&[0.0; 3], DMatrix::identity(3, 3), &[1.0, 3.0, 5.0]);
    let n = 200_000;
    let w = p.sample(n, 12).unwrap();
    let (m, _) = mean_cov(&w);
    let k = (2.0 / std::f64::consts::PI).sqrt();
    for (j, d) in [1.0, 3.0, 5.0].iter().enumerate() {
        let var = 1.0 + d * d * (1.0 - 2.0 / std::f64::consts::PI);
        assert!((m[j] - d * k).abs() < 3.0 * (var / n as f64).sqrt(), "{j}: {}", m[j]);
    }
}

#[test]
fn sampler_is_deterministic_per_seed() {
    let p = sn(&[0.0; 3], DMatrix::identity(3, 3), &[1.0, 3.0, 5.0]);
    assert_eq!(p.sample(50, 9).unwrap(), p.sample(50, 9).unwrap());
    assert_ne!(p.sample(50, 9).unwrap(), p.sample(50, 10).unwrap());
}

#[test]
fn truncated_sampler_matches_tn_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 1_000_000;
    let spec = TruncatedNormalSpec::new(0.0, 1.0, 0.0).unwrap();
    let mean = (0..n).map(|_| tn_sample(&spec, &mut rng)).sum::<f64>() / n as f64;
    let (e1, e2) = tn_moments(0.0, 1.0);
    assert!((mean - e1).abs() < 3.0 * ((e2 - e1 * e1) / n as f64).sqrt());
}

#[test]
fn far_lower_bound_recovers_normal_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 400_000;
    let spec = TruncatedNormalSpec::new(2.0, 4.0, 2.0 - 40.0 * 2.0).unwrap();
    let xs: Vec<f64> = (0..n).map(|_| tn_sample(&spec, &mut rng)).collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    assert!((m - 2.0).abs() < 3.0 * (4.0 / n as f64).sqrt());
    assert!((v - 4.0).abs() < 3.0 * (32.0 / n as f64).sqrt());
}

#[test]
fn conditionals_average_back_to_the_joint() {
    // E over X of the conditional mean, and E[cov] + Cov[mean], must reproduce
    // the joint (Y, Z) moments.
    let p = sn(
        &[0.5, -1.0, 2.0],
        DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.3, 0.4, 1.5, 0.2, -0.3, 0.2, 0.8]),
        &[1.0, 2.0, -1.5],
    );
    let n = 40_000;
    let w = p.sample(n, 15).unwrap();
    let mut means = DMatrix::zeros(n, 2);
    let mut avg_cov = DMatrix::<f64>::zeros(2, 2);
    for i in 0..n {
        let c = p.conditional_sn(&[w[(i, 0)]]).unwrap();
        means.row_mut(i).copy_from(&c.mean().transpose());
        avg_cov += c.covariance() / n as f64;
    }
    let (m_bar, cov_of_means) = mean_cov(&means);
    let implied = avg_cov + cov_of_means;
    let (jm, jc) = (p.mean(), p.covariance());
    for j in 0..2 {
        let sd = jc[(j + 1, j + 1)].sqrt();
        assert!((m_bar[j] - jm[j + 1]).abs() < 4.0 * sd / (n as f64).sqrt());
        for k in 0..2 {
            assert!((implied[(j, k)] - jc[(j + 1, k + 1)]).abs() < 0.05, "({j},{k})");
        }
    }
}

#[test]
fn em_log_likelihood_never_decreases() {
    let p = sn(&[0.0; 3], DMatrix::identity(3, 3), &[1.0, 3.0, 5.0]);
    let (w, _) = draw(&Model::SkewNormal(p), 1000, 16);
    let ds = split(&w, 500, BlockDims::new(1, 1, 1));
    let (fit, rep) = fit_skew_normal(&ds, &EMConfig::default()).unwrap();
    assert!(rep.loglik_trace.windows(2).all(|t| t[1] >= t[0] - 1e-8));
    assert!(fit.constraint_residual() <= 1e-10);
}
