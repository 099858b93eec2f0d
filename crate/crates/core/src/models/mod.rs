//! Probabilistic building blocks of the test: a predictive model scored by log
//! density, and a conditional sampler for one feature given the rest.

mod external;
mod knn;
mod linear;
mod quantile;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind};
use crate::dgp::{oracle_law, DgpName, DgpSpec};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub use external::{ExternalFitter, ExternalModel, ExternalSampler};
pub use knn::{
    fit_categorical_sampler, fit_knn_model, default_neighbors, KnnClassSampler, KnnModel,
    NeighborIndex, KNN_VARIANCE_FLOOR,
};
pub use linear::{
    fit_linear_gaussian, fit_poly2_gaussian, gaussian_log_pdf, Basis, LinearGaussian, OlsFit,
    OLS_VARIANCE_FLOOR,
};
pub use quantile::{
    fit_quantile_grid_sampler, isotonic_clamp, midpoint_levels, quantile_neighbors,
    KnnQuantileSampler, QuantileFnSampler, QuantileGrid,
};

/// Tolerance on the total mass of a predicted class distribution.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// A fitted model of `p(y | x)`.
///
/// Implementations are immutable after fitting; `log_density` must be a pure
/// function of its arguments and safe to call concurrently.
pub trait PredictiveModel: Send + Sync {
    fn target_kind(&self) -> FeatureKind;

    /// Log predictive density (nats) of `y` at feature row `x`. For categorical
    /// targets `y` is a level index and the result is a log probability.
    fn log_density(&self, x: &[f64], y: f64) -> Result<f64>;

    fn log_density_batch(&self, rows: &[Vec<f64>], ys: &[f64]) -> Result<Vec<f64>> {
        if rows.len() != ys.len() {
            return Err(Error::model(format!(
                "{} rows but {} targets",
                rows.len(),
                ys.len()
            )));
        }
        rows.iter()
            .zip(ys)
            .map(|(x, &y)| self.log_density(x, y))
            .collect()
    }
}

/// A fitted approximation of `p(x_j | x_{-j})`.
pub trait ConditionalSampler: Send + Sync {
    fn kind(&self) -> FeatureKind;

    /// The conditional law at one conditioning row (the other `p - 1` features).
    fn conditional(&self, x_minus_j: &[f64]) -> Result<Conditional>;

    fn conditional_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<Conditional>> {
        rows.iter().map(|r| self.conditional(r)).collect()
    }

    fn sample(&self, x_minus_j: &[f64], seed: u64) -> Result<f64> {
        Ok(self.conditional(x_minus_j)?.sample(seed))
    }
}

/// Fits a [`PredictiveModel`] on a training fold.
pub trait ModelFitter: Send + Sync {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn PredictiveModel>>;
}

/// Fits a [`ConditionalSampler`] for column `j` on a training fold.
pub trait SamplerFitter: Send + Sync {
    fn fit(&self, train: &Dataset, j: usize) -> Result<Box<dyn ConditionalSampler>>;
}

/// A per-row conditional distribution that can be sampled cheaply many times.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditional {
    Gaussian { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Quantile values at midpoint levels; sampling picks one uniformly.
    Grid { values: Vec<f64> },
    /// Class probabilities over levels `0..L`.
    Categorical { probs: Vec<f64> },
}

impl Conditional {
    pub fn sample(&self, seed: u64) -> f64 {
        self.sample_with(&mut rng_from_seed(seed))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Conditional::Gaussian { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Conditional::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Conditional::Grid { values } => values[rng.random_range(0..values.len())],
            Conditional::Categorical { probs } => {
                let u: f64 = rng.random();
                sample_level(probs, u) as f64
            }
        }
    }
}

/// Inverse-CDF draw from a mass function with uniform variate `u` in `[0, 1)`.
pub fn sample_level(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (level, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return level;
        }
    }
    // Rounding left u above the total mass: take the last level with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Checks a vector of class probabilities: finite, non-negative, sums to one.
pub fn check_probabilities(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::model(format!("invalid class probabilities {probs:?}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(Error::model(format!(
            "class probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Predictive models available from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    /// `linear` for continuous targets of linear designs, `poly2` for other
    /// continuous targets, `knn` for categorical targets.
    Auto,
    Linear,
    Poly2,
    Knn,
    External,
}

/// Conditional samplers available from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerChoice {
    /// Exact conditional of a known generator.
    Oracle,
    /// k-NN quantile grid for continuous columns, k-NN class probabilities
    /// for categorical ones.
    Knn,
    External,
}

macro_rules! choice_strings {
    ($ty:ty { $($variant:ident => $s:literal),* $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(<$ty>::$variant => $s),* }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(<$ty>::$variant),)*
                    _ => Err(Error::InvalidConfig(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), s
                    ))),
                }
            }
        }
    };
}

choice_strings!(ModelChoice { Auto => "auto", Linear => "linear", Poly2 => "poly2", Knn => "knn", External => "external" });
choice_strings!(SamplerChoice { Oracle => "oracle", Knn => "knn", External => "external" });

impl ModelChoice {
    /// Resolves `Auto` against the target kind and, when known, the generator.
    pub fn resolve(self, target_kind: FeatureKind, dgp: Option<DgpName>) -> ModelChoice {
        match self {
            ModelChoice::Auto if target_kind.is_categorical() => ModelChoice::Knn,
            ModelChoice::Auto => match dgp {
                Some(d) if !d.is_linear() => ModelChoice::Poly2,
                _ => ModelChoice::Linear,
            },
            other => other,
        }
    }
}

pub struct LinearFitter {
    pub basis: Basis,
}

impl ModelFitter for LinearFitter {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn PredictiveModel>> {
        Ok(Box::new(LinearGaussian::fit(train, self.basis)?))
    }
}

#[derive(Default)]
pub struct KnnFitter {
    /// Neighbour count; `ceil(sqrt(n_train))` when unset.
    pub k: Option<usize>,
}

impl ModelFitter for KnnFitter {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn PredictiveModel>> {
        let k = self.k.unwrap_or_else(|| default_neighbors(train.n()));
        Ok(Box::new(fit_knn_model(train, k)?))
    }
}

/// Built-in fitter for a resolved (non-`Auto`, non-`External`) choice.
pub fn builtin_model_fitter(choice: ModelChoice) -> Result<Box<dyn ModelFitter>> {
    match choice {
        ModelChoice::Linear => Ok(Box::new(LinearFitter { basis: Basis::Linear })),
        ModelChoice::Poly2 => Ok(Box::new(LinearFitter { basis: Basis::Quadratic })),
        ModelChoice::Knn => Ok(Box::new(KnnFitter::default())),
        ModelChoice::Auto | ModelChoice::External => Err(Error::InvalidConfig(format!(
            "model choice `{choice}` has no built-in fitter"
        ))),
    }
}

/// Samples from the exact conditional of a known generator.
pub struct OracleSampler {
    spec: DgpSpec,
    j: usize,
}

impl OracleSampler {
    pub fn new(spec: DgpSpec, j: usize) -> Result<Self> {
        if j >= spec.p {
            return Err(Error::NoOracle {
                dgp: spec.name.to_string(),
                feature: j,
            });
        }
        Ok(OracleSampler { spec, j })
    }
}

impl ConditionalSampler for OracleSampler {
    fn kind(&self) -> FeatureKind {
        FeatureKind::Continuous
    }

    fn conditional(&self, x_minus_j: &[f64]) -> Result<Conditional> {
        oracle_law(&self.spec, self.j, x_minus_j)
    }
}

pub struct OracleFitter {
    pub spec: DgpSpec,
}

impl SamplerFitter for OracleFitter {
    fn fit(&self, train: &Dataset, j: usize) -> Result<Box<dyn ConditionalSampler>> {
        if train.p() != self.spec.p {
            return Err(Error::InvalidData(format!(
                "oracle for `{}` expects {} features, data has {}",
                self.spec.name,
                self.spec.p,
                train.p()
            )));
        }
        Ok(Box::new(OracleSampler::new(self.spec.clone(), j)?))
    }
}

/// k-NN samplers: quantile grid for continuous columns, class probabilities
/// for categorical ones.
pub struct KnnSamplerFitter {
    pub grid_size: usize,
    pub k: Option<usize>,
}

impl SamplerFitter for KnnSamplerFitter {
    fn fit(&self, train: &Dataset, j: usize) -> Result<Box<dyn ConditionalSampler>> {
        if j >= train.p() {
            return Err(Error::InvalidConfig(format!("feature {j} out of range")));
        }
        match train.kind(j) {
            FeatureKind::Continuous => {
                let k = self
                    .k
                    .unwrap_or_else(|| quantile_neighbors(train.n(), self.grid_size));
                Ok(Box::new(KnnQuantileSampler::fit(train, j, self.grid_size, k)?))
            }
            FeatureKind::Categorical { .. } => {
                let k = self.k.unwrap_or_else(|| default_neighbors(train.n()));
                Ok(Box::new(KnnClassSampler::fit(train, j, k)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_mass_always_first_level() {
        let c = Conditional::Categorical { probs: vec![1.0, 0.0] };
        assert!((0..1000).all(|s| c.sample(s) == 0.0));
    }

    #[test]
    fn fair_coin_frequency() {
        let c = Conditional::Categorical { probs: vec![0.5, 0.5] };
        let zeros = (0..10_000).filter(|&s| c.sample(s) == 0.0).count();
        let f = zeros as f64 / 10_000.0;
        assert!((f - 0.5).abs() < 0.015, "{f}");
    }

    #[test]
    fn level_lookup_handles_rounding() {
        assert_eq!(sample_level(&[0.3, 0.7], 0.0), 0);
        assert_eq!(sample_level(&[0.3, 0.7], 0.3), 1);
        assert_eq!(sample_level(&[0.5, 0.5 - 1e-12, 0.0], 0.999_999_999_999_9), 1);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let c = Conditional::Gaussian { mean: 1.0, sd: 2.0 };
        assert_eq!(c.sample(99), c.sample(99));
        assert_ne!(c.sample(99), c.sample(100));
    }

    #[test]
    fn probability_check() {
        assert!(check_probabilities(&[0.6, 0.4]).is_ok());
        assert!(check_probabilities(&[0.6, 0.5]).is_err());
        assert!(check_probabilities(&[0.6, 0.2]).is_err());
        assert!(check_probabilities(&[1.2, -0.2]).is_err());
    }

    #[test]
    fn choices_parse() {
        assert_eq!("poly2".parse::<ModelChoice>().unwrap(), ModelChoice::Poly2);
        assert_eq!("oracle".parse::<SamplerChoice>().unwrap(), SamplerChoice::Oracle);
        assert!("tabpfn".parse::<ModelChoice>().is_err());
    }

    #[test]
    fn auto_resolution() {
        let cat = FeatureKind::Categorical { levels: 2 };
        let cont = FeatureKind::Continuous;
        assert_eq!(ModelChoice::Auto.resolve(cat, Some(DgpName::Xor)), ModelChoice::Knn);
        assert_eq!(ModelChoice::Auto.resolve(cont, Some(DgpName::LinearSparse)), ModelChoice::Linear);
        assert_eq!(ModelChoice::Auto.resolve(cont, Some(DgpName::Friedman1)), ModelChoice::Poly2);
        assert_eq!(ModelChoice::Auto.resolve(cont, None), ModelChoice::Linear);
        assert_eq!(ModelChoice::Knn.resolve(cont, None), ModelChoice::Knn);
    }
}
