use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;

use crt_core::crt::{elpd, mc_pvalue, test_all_features, test_features, CrtConfig};
use crt_core::data::split_dataset;
use crt_core::dgp::{generate, DgpName};
use crt_core::models::{
    fit_knn_model, ConditionalSampler, KnnSamplerFitter, LinearFitter, Basis, ModelFitter,
    OracleFitter, PredictiveModel, SamplerFitter,
};
use crt_core::{Dataset, Result};

struct Counting<F> {
    inner: F,
    calls: AtomicUsize,
}

impl<F> Counting<F> {
    fn new(inner: F) -> Self {
        Counting { inner, calls: AtomicUsize::new(0) }
    }
    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F: ModelFitter> ModelFitter for Counting<F> {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn PredictiveModel>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.fit(train)
    }
}

impl<F: SamplerFitter> SamplerFitter for Counting<F> {
    fn fit(&self, train: &Dataset, j: usize) -> Result<Box<dyn ConditionalSampler>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.fit(train, j)
    }
}

fn config(b: usize, seed: u64) -> CrtConfig {
    CrtConfig {
        num_null_draws: b,
        master_seed: seed,
        ..Default::default()
    }
}

#[test]
fn models_are_fitted_once_not_per_draw() {
    let inst = generate(DgpName::LinearSparse, 150, 3).unwrap();
    let model = Counting::new(LinearFitter { basis: Basis::Linear });
    let sampler = Counting::new(OracleFitter { spec: inst.spec.clone() });
    let tests = test_all_features(&inst.data, &config(49, 1), &model, &sampler).unwrap();
    assert_eq!(tests.results().count(), 10);
    assert_eq!(model.calls(), 1);
    assert_eq!(sampler.calls(), 10);
}

#[test]
fn strong_linear_signal_is_detected() {
    let inst = generate(DgpName::LinearSparse, 500, 8).unwrap();
    let tests = test_all_features(
        &inst.data,
        &config(199, 8),
        &LinearFitter { basis: Basis::Linear },
        &OracleFitter { spec: inst.spec.clone() },
    )
    .unwrap();
    let p: Vec<f64> = tests.results().map(|r| r.p_value).collect();
    assert!(p[..3].iter().all(|&v| v <= 0.05), "{p:?}");
    assert!(p[3..].iter().filter(|&&v| v > 0.05).count() >= 4, "{p:?}");
}

#[test]
fn results_are_deterministic_across_thread_counts() {
    let inst = generate(DgpName::Friedman1, 200, 5).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let tests = test_all_features(
                &inst.data,
                &config(39, 77),
                &LinearFitter { basis: Basis::Quadratic },
                &KnnSamplerFitter { grid_size: 50, k: None },
            )
            .unwrap();
            tests.results().map(|r| (r.t_obs, r.t_null.clone(), r.p_value)).collect::<Vec<_>>()
        })
    };
    let one = run(1);
    assert_eq!(one.len(), 10);
    assert_eq!(one, run(4));
    assert_eq!(one, run(7));
}

#[test]
fn single_draw_gives_half_or_one() {
    let inst = generate(DgpName::WeakSignal, 100, 2).unwrap();
    let tests = test_all_features(
        &inst.data,
        &config(1, 4),
        &LinearFitter { basis: Basis::Linear },
        &OracleFitter { spec: inst.spec.clone() },
    )
    .unwrap();
    for r in tests.results() {
        assert!(r.p_value == 0.5 || r.p_value == 1.0, "{}", r.p_value);
    }
}

#[test]
fn feature_subset_and_seeds_are_per_feature() {
    // Testing one feature alone reproduces its result from the full run.
    let inst = generate(DgpName::NoiseBlock, 120, 6).unwrap();
    let model = LinearFitter { basis: Basis::Linear };
    let sampler = OracleFitter { spec: inst.spec.clone() };
    let all = test_all_features(&inst.data, &config(29, 6), &model, &sampler).unwrap();
    let one = test_features(&inst.data, &config(29, 6), Some(&[7]), &model, &sampler).unwrap();
    let a = all.results().find(|r| r.feature_index == 7).unwrap();
    let b = one.results().next().unwrap();
    assert_eq!(a.t_null, b.t_null);
    assert_eq!(a.p_value, b.p_value);
    assert!(test_features(&inst.data, &config(29, 6), Some(&[20]), &model, &sampler).is_err());
}

#[test]
fn knn_learns_xor() {
    let inst = generate(DgpName::Xor, 500, 31).unwrap();
    let split = split_dataset(&inst.data, 0.8, 2).unwrap();
    let train = inst.data.subset(&split.train).unwrap();
    let eval = inst.data.subset(&split.eval).unwrap();
    let model = fit_knn_model(&train, 20).unwrap();
    let ll = elpd(&model, &eval).unwrap();
    assert!(ll > 0.5f64.ln(), "{ll}");
}

#[test]
fn null_p_values_are_not_anti_conservative() {
    // Irrelevant features under the exact conditional: the rejection rate at
    // several levels stays near its nominal value.
    let mut p = Vec::new();
    for r in 0..60u64 {
        let inst = generate(DgpName::LinearSparse, 120, 1000 + r).unwrap();
        let tests = test_features(
            &inst.data,
            &config(39, r),
            Some(&[3, 4, 5, 6, 7, 8, 9]),
            &LinearFitter { basis: Basis::Linear },
            &OracleFitter { spec: inst.spec.clone() },
        )
        .unwrap();
        p.extend(tests.results().map(|r| r.p_value));
    }
    let m = p.len() as f64;
    for alpha in [0.1, 0.25, 0.5] {
        let rate = p.iter().filter(|&&v| v <= alpha).count() as f64 / m;
        let slack = 3.0 * (alpha * (1.0 - alpha) / m).sqrt();
        assert!(rate <= alpha + slack, "alpha {alpha}: {rate}");
    }
}

proptest! {
    #[test]
    fn p_value_bounds_and_monotonicity(
        t_null in prop::collection::vec(-5.0f64..5.0, 1..40),
        a in -6.0f64..6.0,
        b in -6.0f64..6.0,
    ) {
        let big_b = t_null.len() as f64;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = mc_pvalue(lo, &t_null).unwrap();
        let p_hi = mc_pvalue(hi, &t_null).unwrap();
        prop_assert!(p_hi <= p_lo);
        for p in [p_lo, p_hi] {
            prop_assert!(p >= 1.0 / (big_b + 1.0) && p <= 1.0);
            let k = p * (big_b + 1.0);
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
