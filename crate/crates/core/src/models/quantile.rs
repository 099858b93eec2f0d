//! Quantile-grid conditional sampling.
//!
//! A conditional distribution is represented per row by its quantiles at the
//! midpoint levels `(k - 0.5) / K`, `k = 1..K`. Drawing a grid index uniformly
//! and returning that quantile is a discretised inverse-CDF draw.

use super::linear::OlsFit;
use super::{Conditional, ConditionalSampler, NeighborIndex};
use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};

/// `(k - 0.5) / K` for `k = 1..=K`.
pub fn midpoint_levels(grid_size: usize) -> Vec<f64> {
    (1..=grid_size)
        .map(|k| (k as f64 - 0.5) / grid_size as f64)
        .collect()
}

/// Repairs quantile crossing in place with a running maximum.
pub fn isotonic_clamp(values: &mut [f64]) {
    for i in 1..values.len() {
        if values[i] < values[i - 1] {
            values[i] = values[i - 1];
        }
    }
}

/// Linear-interpolation sample quantile of sorted data (Hyndman-Fan type 7).
fn sorted_quantile(sorted: &[f64], tau: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * tau;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Predicted quantiles for a batch of rows at shared levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    pub levels: Vec<f64>,
    /// One monotone row of `levels.len()` values per input row.
    pub values: Vec<Vec<f64>>,
}

impl QuantileGrid {
    pub fn grid_size(&self) -> usize {
        self.levels.len()
    }

    pub fn into_conditionals(self) -> Vec<Conditional> {
        self.values
            .into_iter()
            .map(|values| Conditional::Grid { values })
            .collect()
    }
}

/// Neighbour count for the k-NN quantile estimator:
/// `min(n, max(ceil(sqrt(n)), 4K))`.
///
/// Fewer neighbours than grid points would make most of the `K` levels repeat
/// the same few order statistics.
pub fn quantile_neighbors(n_train: usize, grid_size: usize) -> usize {
    let root = (n_train as f64).sqrt().ceil() as usize;
    root.max(4 * grid_size).min(n_train).max(1)
}

/// k-NN conditional quantile estimator for a continuous column.
///
/// `x_j` is first regressed linearly on `x_{-j}`; the grid for a row is its
/// fitted location plus the empirical quantiles of the residuals of its `k`
/// nearest training rows.
#[derive(Debug, Clone)]
pub struct KnnQuantileSampler {
    location: OlsFit,
    residuals: Vec<f64>,
    index: NeighborIndex,
    levels: Vec<f64>,
    k: usize,
}

impl KnnQuantileSampler {
    pub fn fit(train: &Dataset, j: usize, grid_size: usize, k: usize) -> Result<KnnQuantileSampler> {
        if j >= train.p() {
            return Err(Error::InvalidConfig(format!("feature {j} out of range")));
        }
        if train.kind(j).is_categorical() {
            return Err(Error::model(format!(
                "column {j} is categorical; use the categorical sampler"
            )));
        }
        if grid_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "quantile grid needs K >= 2, got {grid_size}"
            )));
        }
        let n = train.n();
        if k == 0 || k > n {
            return Err(Error::model(format!("k = {k} must lie in [1, {n}]")));
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|i| train.row_without(i, j)).collect();
        let xj = train.column(j);
        let location = if n >= rows[0].len() + 2 {
            OlsFit::fit(&rows, xj)?
        } else {
            OlsFit::fit(&vec![Vec::new(); n], xj)?
        };
        let residuals = if location.coef.is_empty() {
            xj.iter().map(|v| v - location.intercept).collect()
        } else {
            rows.iter()
                .zip(xj)
                .map(|(r, v)| v - location.predict(r))
                .collect()
        };
        let index = NeighborIndex::new(&rows)?;
        let k = if index.dim() == 0 { n } else { k };
        Ok(KnnQuantileSampler {
            location,
            residuals,
            index,
            levels: midpoint_levels(grid_size),
            k,
        })
    }

    pub fn neighbors(&self) -> usize {
        self.k
    }

    /// Monotone quantile values for one conditioning row.
    pub fn quantiles(&self, x_minus_j: &[f64]) -> Result<Vec<f64>> {
        let nb = self.index.nearest(x_minus_j, self.k)?;
        let mut local: Vec<f64> = nb.iter().map(|&i| self.residuals[i]).collect();
        local.sort_unstable_by(f64::total_cmp);
        let loc = if self.location.coef.is_empty() {
            self.location.intercept
        } else {
            self.location.predict(x_minus_j)
        };
        let mut values: Vec<f64> = self
            .levels
            .iter()
            .map(|&t| loc + sorted_quantile(&local, t))
            .collect();
        isotonic_clamp(&mut values);
        Ok(values)
    }

    pub fn predict_grid(&self, rows: &[Vec<f64>]) -> Result<QuantileGrid> {
        Ok(QuantileGrid {
            levels: self.levels.clone(),
            values: rows.iter().map(|r| self.quantiles(r)).collect::<Result<_>>()?,
        })
    }
}

impl ConditionalSampler for KnnQuantileSampler {
    fn kind(&self) -> FeatureKind {
        FeatureKind::Continuous
    }

    fn conditional(&self, x_minus_j: &[f64]) -> Result<Conditional> {
        Ok(Conditional::Grid {
            values: self.quantiles(x_minus_j)?,
        })
    }
}

/// Fits the k-NN quantile-grid sampler with the default neighbour count.
pub fn fit_quantile_grid_sampler(train: &Dataset, j: usize, grid_size: usize) -> Result<KnnQuantileSampler> {
    KnnQuantileSampler::fit(train, j, grid_size, quantile_neighbors(train.n(), grid_size))
}

/// Quantile-grid sampler over a known conditional quantile function
/// `q(x_minus_j, tau)`.
pub struct QuantileFnSampler<F> {
    quantile: F,
    levels: Vec<f64>,
}

impl<F> QuantileFnSampler<F>
where
    F: Fn(&[f64], f64) -> f64 + Send + Sync,
{
    pub fn new(quantile: F, grid_size: usize) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "quantile grid needs K >= 2, got {grid_size}"
            )));
        }
        Ok(QuantileFnSampler {
            quantile,
            levels: midpoint_levels(grid_size),
        })
    }
}

impl<F> ConditionalSampler for QuantileFnSampler<F>
where
    F: Fn(&[f64], f64) -> f64 + Send + Sync,
{
    fn kind(&self) -> FeatureKind {
        FeatureKind::Continuous
    }

    fn conditional(&self, x_minus_j: &[f64]) -> Result<Conditional> {
        let mut values: Vec<f64> = self
            .levels
            .iter()
            .map(|&t| (self.quantile)(x_minus_j, t))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quantile function output".into()));
        }
        isotonic_clamp(&mut values);
        Ok(Conditional::Grid { values })
    }
}
