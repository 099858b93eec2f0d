//! Conditional samplers against known conditional laws.

use statrs::distribution::{ContinuousCDF, Normal};

use crt_core::dgp::{generate, oracle_conditional, DgpName};
use crt_core::models::{
    fit_categorical_sampler, fit_quantile_grid_sampler, ConditionalSampler, KnnSamplerFitter,
    OracleFitter, SamplerFitter,
};
use crt_core::seed::derive_seed;
use crt_core::{Dataset, FeatureKind};

fn ks(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / m - cdf(x)).max(cdf(x) - i as f64 / m))
        .fold(0.0, f64::max)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

#[test]
fn oracle_proxy_given_anchor_is_gaussian() {
    let spec = DgpName::Correlated.spec(100);
    let a = 0.7;
    let draws: Vec<f64> = (0..20_000)
        .map(|i| oracle_conditional(&spec, 1, &[a, 0.0, 0.0, 0.0], derive_seed(9, &[i])).unwrap())
        .collect();
    let law = Normal::new(a, 0.1).unwrap();
    // 1.36 / sqrt(20000) ~ 0.0096 at the 5% level.
    assert!(ks(&draws, |x| law.cdf(x)) < 0.012);
}

#[test]
fn oracle_anchor_given_proxy_is_gaussian() {
    let spec = DgpName::ConditionalNull.spec(100);
    let b = -1.3;
    let draws: Vec<f64> = (0..20_000)
        .map(|i| oracle_conditional(&spec, 0, &[b], derive_seed(10, &[i])).unwrap())
        .collect();
    let law = Normal::new(b / 1.01, (0.01f64 / 1.01).sqrt()).unwrap();
    assert!(ks(&draws, |x| law.cdf(x)) < 0.012);
}

#[test]
fn oracle_anchor_law_matches_generated_regression() {
    // Least squares of X1 on X2 from generated data estimates the oracle's
    // slope and residual variance.
    let inst = generate(DgpName::Correlated, 200_000, 4).unwrap();
    let (x1, x2) = (inst.data.column(0), inst.data.column(1));
    let n = x1.len() as f64;
    let (m1, m2) = (x1.iter().sum::<f64>() / n, x2.iter().sum::<f64>() / n);
    let sxy: f64 = x1.iter().zip(x2).map(|(a, b)| (a - m1) * (b - m2)).sum();
    let sxx: f64 = x2.iter().map(|b| (b - m2).powi(2)).sum();
    let slope = sxy / sxx;
    let resid: f64 = x1
        .iter()
        .zip(x2)
        .map(|(a, b)| (a - m1 - slope * (b - m2)).powi(2))
        .sum::<f64>()
        / (n - 2.0);
    assert!((slope - 1.0 / 1.01).abs() < 0.005, "{slope}");
    assert!((resid - 0.01 / 1.01).abs() < 0.0005, "{resid}");
}

#[test]
fn oracle_fitter_checks_dimensions() {
    let inst = generate(DgpName::LinearSparse, 50, 1).unwrap();
    let wrong = OracleFitter { spec: DgpName::Xor.spec(50) };
    assert!(wrong.fit(&inst.data, 0).is_err());
    let right = OracleFitter { spec: inst.spec.clone() };
    assert!(right.fit(&inst.data, 9).is_ok());
    assert!(right.fit(&inst.data, 10).is_err());
}

#[test]
fn knn_grid_tracks_the_proxy_conditional() {
    let inst = generate(DgpName::Correlated, 2000, 12).unwrap();
    let sampler = KnnSamplerFitter { grid_size: 200, k: None }.fit(&inst.data, 1).unwrap();
    for a in [-1.0, 0.0, 1.2] {
        let draws: Vec<f64> = (0..4000)
            .map(|i| sampler.sample(&[a, 0.0, 0.0, 0.0], derive_seed(13, &[i])).unwrap())
            .collect();
        let (mean, sd) = mean_sd(&draws);
        assert!((mean - a).abs() < 0.03, "a={a} mean={mean}");
        assert!((sd - 0.1).abs() < 0.02, "a={a} sd={sd}");
    }
}

#[test]
fn learned_grid_on_uniform_marginal() {
    let inst = generate(DgpName::Friedman1, 2000, 21).unwrap();
    let sampler = fit_quantile_grid_sampler(&inst.data, 5, 200).unwrap();
    let probe = generate(DgpName::Friedman1, 3000, 22).unwrap();
    let draws: Vec<f64> = (0..3000)
        .map(|i| sampler.sample(&probe.data.row_without(i, 5), derive_seed(23, &[i as u64])).unwrap())
        .collect();
    assert!(ks(&draws, |x| x.clamp(0.0, 1.0)) < 0.05);
}

#[test]
fn categorical_sampler_learns_dependence() {
    // Column 1 copies the sign of column 0.
    let n = 600;
    let x0: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64) * 2.0 - 1.0).collect();
    let x1: Vec<f64> = x0.iter().map(|&v| (v > 0.0) as u8 as f64).collect();
    let data = Dataset::from_columns(
        vec![x0, x1],
        vec![FeatureKind::Continuous, FeatureKind::Categorical { levels: 2 }],
        vec![0.0; n],
        FeatureKind::Continuous,
    )
    .unwrap();
    let sampler = fit_categorical_sampler(&data, 1).unwrap();
    let ones = (0..1000)
        .filter(|&i| sampler.sample(&[0.8], derive_seed(30, &[i])).unwrap() == 1.0)
        .count();
    assert!(ones > 900, "{ones}");
    let zeros = (0..1000)
        .filter(|&i| sampler.sample(&[-0.8], derive_seed(31, &[i])).unwrap() == 0.0)
        .count();
    assert!(zeros > 900, "{zeros}");
}
