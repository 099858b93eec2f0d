//! k-nearest-neighbour predictive model and class-probability sampler.

use super::linear::gaussian_log_pdf;
use super::{Conditional, ConditionalSampler, PredictiveModel};
use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};

pub const KNN_VARIANCE_FLOOR: f64 = 1e-6;

/// `ceil(sqrt(n))`, at least 1.
pub fn default_neighbors(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}

/// Brute-force Euclidean neighbour search on z-scored features.
///
/// Centring and scaling use the training rows only. Ties in distance are
/// broken by training-row index so results never depend on sort stability.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Row-major `n x d` standardised training rows.
    points: Vec<f64>,
    n: usize,
    d: usize,
}

impl NeighborIndex {
    pub fn new(rows: &[Vec<f64>]) -> Result<NeighborIndex> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("neighbour index rows"));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::model("ragged rows in neighbour index"));
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut scale = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        for s in scale.iter_mut() {
            let sd = (*s / n as f64).sqrt();
            *s = if sd > 0.0 { sd } else { 1.0 };
        }
        let mut points = Vec::with_capacity(n * d);
        for r in rows {
            points.extend(r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s));
        }
        Ok(NeighborIndex {
            mean,
            scale,
            points,
            n,
            d,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Indices of the `k` nearest training rows to `query` (unordered).
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        if query.len() != self.d {
            return Err(Error::model(format!(
                "query has {} features, index has {}",
                query.len(),
                self.d
            )));
        }
        if k == 0 || k > self.n {
            return Err(Error::model(format!(
                "neighbour count {k} outside [1, {}]",
                self.n
            )));
        }
        let z: Vec<f64> = query
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let d = self.d;
        let mut dist: Vec<(f64, usize)> = (0..self.n)
            .map(|i| {
                let pt = &self.points[i * d..(i + 1) * d];
                let d2: f64 = pt.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        if k < self.n {
            dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        Ok(dist[..k].iter().map(|&(_, i)| i).collect())
    }
}

/// Laplace-smoothed class frequencies `(count + 1) / (k + L)`.
fn smoothed_probs(labels: impl Iterator<Item = f64>, k: usize, levels: usize) -> Vec<f64> {
    let mut counts = vec![0usize; levels];
    for l in labels {
        counts[l as usize] += 1;
    }
    let denom = (k + levels) as f64;
    counts.iter().map(|&c| (c + 1) as f64 / denom).collect()
}

/// k-NN predictive model. Continuous targets get a Gaussian with the local
/// mean and (floored) local variance; categorical targets get smoothed class
/// frequencies.
#[derive(Debug, Clone)]
pub struct KnnModel {
    index: NeighborIndex,
    y: Vec<f64>,
    kind: FeatureKind,
    k: usize,
}

pub fn fit_knn_model(train: &Dataset, k: usize) -> Result<KnnModel> {
    if k == 0 || k > train.n() {
        return Err(Error::model(format!(
            "k = {k} must lie in [1, {}] (training rows)",
            train.n()
        )));
    }
    Ok(KnnModel {
        index: NeighborIndex::new(&train.rows())?,
        y: train.target().to_vec(),
        kind: train.target_kind(),
        k,
    })
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Predicted class probabilities; categorical targets only.
    pub fn class_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let FeatureKind::Categorical { levels } = self.kind else {
            return Err(Error::model("class probabilities need a categorical target"));
        };
        let nb = self.index.nearest(x, self.k)?;
        Ok(smoothed_probs(nb.iter().map(|&i| self.y[i]), self.k, levels))
    }

    /// Local mean and floored local variance; continuous targets only.
    pub fn local_moments(&self, x: &[f64]) -> Result<(f64, f64)> {
        if self.kind != FeatureKind::Continuous {
            return Err(Error::model("local moments need a continuous target"));
        }
        let nb = self.index.nearest(x, self.k)?;
        let k = nb.len() as f64;
        let mean = nb.iter().map(|&i| self.y[i]).sum::<f64>() / k;
        let var = if nb.len() > 1 {
            nb.iter().map(|&i| (self.y[i] - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        Ok((mean, var.max(KNN_VARIANCE_FLOOR)))
    }
}

impl PredictiveModel for KnnModel {
    fn target_kind(&self) -> FeatureKind {
        self.kind
    }

    fn log_density(&self, x: &[f64], y: f64) -> Result<f64> {
        match self.kind {
            FeatureKind::Continuous => {
                let (mean, var) = self.local_moments(x)?;
                Ok(gaussian_log_pdf(y, mean, var))
            }
            FeatureKind::Categorical { levels } => {
                if y.fract() != 0.0 || y < 0.0 || y >= levels as f64 {
                    return Err(Error::model(format!("{y} is not a level in [0, {levels})")));
                }
                Ok(self.class_probs(x)?[y as usize].ln())
            }
        }
    }
}

/// Class-probability sampler for a categorical column.
#[derive(Debug, Clone)]
pub struct KnnClassSampler {
    index: NeighborIndex,
    labels: Vec<f64>,
    levels: usize,
    k: usize,
}

impl KnnClassSampler {
    pub fn fit(train: &Dataset, j: usize, k: usize) -> Result<KnnClassSampler> {
        let FeatureKind::Categorical { levels } = train.kind(j) else {
            return Err(Error::model(format!(
                "column {j} is continuous; use the quantile-grid sampler"
            )));
        };
        if k == 0 || k > train.n() {
            return Err(Error::model(format!("k = {k} must lie in [1, {}]", train.n())));
        }
        let rows: Vec<Vec<f64>> = (0..train.n()).map(|i| train.row_without(i, j)).collect();
        Ok(KnnClassSampler {
            index: NeighborIndex::new(&rows)?,
            labels: train.column(j).to_vec(),
            levels,
            k,
        })
    }

    pub fn class_probs(&self, x_minus_j: &[f64]) -> Result<Vec<f64>> {
        let nb = self.index.nearest(x_minus_j, self.k)?;
        Ok(smoothed_probs(nb.iter().map(|&i| self.labels[i]), self.k, self.levels))
    }
}

impl ConditionalSampler for KnnClassSampler {
    fn kind(&self) -> FeatureKind {
        FeatureKind::Categorical { levels: self.levels }
    }

    fn conditional(&self, x_minus_j: &[f64]) -> Result<Conditional> {
        Ok(Conditional::Categorical {
            probs: self.class_probs(x_minus_j)?,
        })
    }
}

pub fn fit_categorical_sampler(train: &Dataset, j: usize) -> Result<KnnClassSampler> {
    KnnClassSampler::fit(train, j, default_neighbors(train.n()))
}
