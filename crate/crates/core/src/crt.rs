//! The conditional randomization test.
//!
//! Holdout arrangement: the predictive model for `Y` and the conditional
//! sampler for `X_j` are fitted once on the training fold. The statistic is
//! the mean log predictive density (ELPD) on the evaluation fold; each null
//! draw replaces column `j` of the evaluation fold with conditional samples and
//! rescores it with the same model.
//!
//! Null draw `b` of row `i` uses seed `derive_seed(feature_seed, [b, i])`, and
//! null statistics are reduced over a pre-indexed vector, so results do not
//! depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::models::{Conditional, ConditionalSampler, ModelFitter, PredictiveModel, SamplerFitter};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrtConfig {
    /// Number of null draws `B`.
    pub num_null_draws: usize,
    /// Number of quantile levels `K` for grid samplers.
    pub quantile_grid_size: usize,
    pub alpha: f64,
    /// Fraction of rows in the training fold.
    pub split_fraction: f64,
    pub master_seed: u64,
}

impl Default for CrtConfig {
    fn default() -> Self {
        CrtConfig {
            num_null_draws: 1000,
            quantile_grid_size: 200,
            alpha: 0.05,
            split_fraction: 0.8,
            master_seed: 0,
        }
    }
}

impl CrtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_null_draws < 1 {
            return Err(Error::InvalidConfig("need at least one null draw".into()));
        }
        if self.quantile_grid_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "quantile grid size must be >= 2, got {}",
                self.quantile_grid_size
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.master_seed, &[0])
    }

    pub fn feature_seed(&self, j: usize) -> u64 {
        derive_seed(self.master_seed, &[1, j as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrtResult {
    pub feature_index: usize,
    /// Observed ELPD, nats per observation.
    pub t_obs: f64,
    pub t_null: Vec<f64>,
    pub p_value: f64,
}

impl CrtResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// Everything needed to test one feature.
pub struct TestPlan<'a> {
    pub feature_index: usize,
    pub num_null_draws: usize,
    /// Root of the per-draw seed hierarchy for this feature.
    pub seed: u64,
    pub y_model: &'a dyn PredictiveModel,
    pub sampler: &'a dyn ConditionalSampler,
    pub eval: &'a Dataset,
}

/// Mean log predictive density of `ys` given `rows`.
pub fn elpd_rows(model: &dyn PredictiveModel, rows: &[Vec<f64>], ys: &[f64]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Empty("evaluation rows"));
    }
    let lds = model.log_density_batch(rows, ys)?;
    if lds.len() != rows.len() {
        return Err(Error::model(format!(
            "{} log densities for {} rows",
            lds.len(),
            rows.len()
        )));
    }
    Ok(lds.iter().sum::<f64>() / lds.len() as f64)
}

pub fn elpd(model: &dyn PredictiveModel, data: &Dataset) -> Result<f64> {
    elpd_rows(model, &data.rows(), data.target())
}

/// Right-tailed Monte Carlo p-value `(1 + #{t_null >= t_obs}) / (B + 1)`.
pub fn mc_pvalue(t_obs: f64, t_null: &[f64]) -> Result<f64> {
    if t_null.is_empty() {
        return Err(Error::Empty("null statistics"));
    }
    if !t_obs.is_finite() {
        return Err(Error::NonFinite(format!("observed statistic {t_obs}")));
    }
    if let Some((b, v)) = t_null.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("null statistic {v} at draw {b}")));
    }
    let exceed = t_null.iter().filter(|&&t| t >= t_obs).count();
    Ok((1 + exceed) as f64 / (t_null.len() + 1) as f64)
}

pub fn run_crt(plan: &TestPlan<'_>) -> Result<CrtResult> {
    let j = plan.feature_index;
    let eval = plan.eval;
    if j >= eval.p() {
        return Err(Error::InvalidConfig(format!("feature {j} out of range for p = {}", eval.p())));
    }
    if plan.num_null_draws < 1 {
        return Err(Error::InvalidConfig("need at least one null draw".into()));
    }
    if plan.sampler.kind() != eval.kind(j) {
        return Err(Error::model(format!(
            "sampler kind {:?} does not match column {j} kind {:?}",
            plan.sampler.kind(),
            eval.kind(j)
        )));
    }

    let rows = eval.rows();
    let ys = eval.target();
    let t_obs = elpd_rows(plan.y_model, &rows, ys)?;
    if !t_obs.is_finite() {
        return Err(Error::NonFinite(format!("observed statistic for feature {j}")));
    }

    let minus_j: Vec<Vec<f64>> = (0..eval.n()).map(|i| eval.row_without(i, j)).collect();
    let laws = plan.sampler.conditional_batch(&minus_j)?;
    if laws.len() != rows.len() {
        return Err(Error::model(format!(
            "sampler returned {} conditionals for {} rows",
            laws.len(),
            rows.len()
        )));
    }

    let draws: Vec<Result<f64>> = (0..plan.num_null_draws)
        .into_par_iter()
        .map(|b| null_statistic(plan, &rows, ys, &laws, b))
        .collect();
    let mut t_null = Vec::with_capacity(draws.len());
    for d in draws {
        t_null.push(d?);
    }
    let p_value = mc_pvalue(t_obs, &t_null)?;
    Ok(CrtResult {
        feature_index: j,
        t_obs,
        t_null,
        p_value,
    })
}

fn null_statistic(
    plan: &TestPlan<'_>,
    rows: &[Vec<f64>],
    ys: &[f64],
    laws: &[Conditional],
    b: usize,
) -> Result<f64> {
    let j = plan.feature_index;
    let mut resampled = rows.to_vec();
    for (i, (row, law)) in resampled.iter_mut().zip(laws).enumerate() {
        row[j] = law.sample(derive_seed(plan.seed, &[b as u64, i as u64]));
    }
    let t = elpd_rows(plan.y_model, &resampled, ys)?;
    if !t.is_finite() {
        return Err(Error::NonFiniteStatistic { feature: j, draw: b });
    }
    Ok(t)
}

#[derive(Debug)]
pub struct FeatureOutcome {
    pub feature_index: usize,
    pub result: Result<CrtResult>,
}

#[derive(Debug)]
pub struct FeatureTests {
    pub split: SplitIndices,
    pub outcomes: Vec<FeatureOutcome>,
}

impl FeatureTests {
    pub fn results(&self) -> impl Iterator<Item = &CrtResult> {
        self.outcomes.iter().filter_map(|o| o.result.as_ref().ok())
    }
}

/// Tests every feature of `data` (or only `features`, when given).
///
/// Splits once, fits the `Y` model once on the training fold, then fits a
/// sampler and runs the test per feature. A failing feature does not stop the
/// others.
pub fn test_features(
    data: &Dataset,
    config: &CrtConfig,
    features: Option<&[usize]>,
    model_fitter: &dyn ModelFitter,
    sampler_fitter: &dyn SamplerFitter,
) -> Result<FeatureTests> {
    config.validate()?;
    let all: Vec<usize> = (0..data.p()).collect();
    let features = features.unwrap_or(&all);
    if let Some(&bad) = features.iter().find(|&&j| j >= data.p()) {
        return Err(Error::InvalidConfig(format!(
            "feature {bad} out of range for p = {}",
            data.p()
        )));
    }
    let split = split_dataset(data, config.split_fraction, config.split_seed())?;
    let train = data.subset(&split.train)?;
    let eval = data.subset(&split.eval)?;
    let y_model = model_fitter.fit(&train)?;

    let outcomes = features
        .par_iter()
        .map(|&j| {
            let result = sampler_fitter.fit(&train, j).and_then(|sampler| {
                run_crt(&TestPlan {
                    feature_index: j,
                    num_null_draws: config.num_null_draws,
                    seed: config.feature_seed(j),
                    y_model: y_model.as_ref(),
                    sampler: sampler.as_ref(),
                    eval: &eval,
                })
            });
            FeatureOutcome {
                feature_index: j,
                result,
            }
        })
        .collect();
    Ok(FeatureTests { split, outcomes })
}

pub fn test_all_features(
    data: &Dataset,
    config: &CrtConfig,
    model_fitter: &dyn ModelFitter,
    sampler_fitter: &dyn SamplerFitter,
) -> Result<FeatureTests> {
    test_features(data, config, None, model_fitter, sampler_fitter)
}
