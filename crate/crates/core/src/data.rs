//! Tabular data model: feature kinds, datasets and train/evaluation splits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// Values are level indices `0..levels`.
    Categorical { levels: usize },
}

impl FeatureKind {
    pub fn categorical(levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidData(format!(
                "categorical kind needs at least 2 levels, got {levels}"
            )));
        }
        Ok(FeatureKind::Categorical { levels })
    }

    pub fn levels(self) -> Option<usize> {
        match self {
            FeatureKind::Continuous => None,
            FeatureKind::Categorical { levels } => Some(levels),
        }
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }

    fn check_value(self, v: f64, what: &str) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::InvalidData(format!("{what}: non-finite value {v}")));
        }
        if let FeatureKind::Categorical { levels } = self {
            if levels < 2 {
                return Err(Error::InvalidData(format!(
                    "{what}: categorical kind with {levels} levels"
                )));
            }
            if v.fract() != 0.0 || v < 0.0 || v >= levels as f64 {
                return Err(Error::InvalidData(format!(
                    "{what}: {v} is not a level index in [0, {levels})"
                )));
            }
        }
        Ok(())
    }
}

/// An `n x p` feature matrix stored column-major, plus a target column.
///
/// Immutable after construction; every constructor validates shapes, finiteness
/// and categorical level ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    kinds: Vec<FeatureKind>,
    target: Vec<f64>,
    target_kind: FeatureKind,
    n: usize,
    p: usize,
}

impl Dataset {
    pub fn from_columns(
        columns: Vec<Vec<f64>>,
        kinds: Vec<FeatureKind>,
        target: Vec<f64>,
        target_kind: FeatureKind,
    ) -> Result<Self> {
        let n = target.len();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 rows, got {n}")));
        }
        Self::build(columns, kinds, target, target_kind)
    }

    pub fn from_rows(
        rows: &[Vec<f64>],
        kinds: Vec<FeatureKind>,
        target: Vec<f64>,
        target_kind: FeatureKind,
    ) -> Result<Self> {
        let p = kinds.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::InvalidData(format!(
                "row {i} has {} entries, expected {p}",
                r.len()
            )));
        }
        let columns = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Self::from_columns(columns, kinds, target, target_kind)
    }

    fn build(
        columns: Vec<Vec<f64>>,
        kinds: Vec<FeatureKind>,
        target: Vec<f64>,
        target_kind: FeatureKind,
    ) -> Result<Self> {
        let n = target.len();
        let p = columns.len();
        if n == 0 {
            return Err(Error::InvalidData("no rows".into()));
        }
        if p == 0 {
            return Err(Error::InvalidData("no feature columns".into()));
        }
        if kinds.len() != p {
            return Err(Error::InvalidData(format!(
                "{} kinds for {p} columns",
                kinds.len()
            )));
        }
        let mut features = Vec::with_capacity(n * p);
        for (j, (col, kind)) in columns.into_iter().zip(&kinds).enumerate() {
            if col.len() != n {
                return Err(Error::InvalidData(format!(
                    "column {j} has {} entries, expected {n}",
                    col.len()
                )));
            }
            for (i, &v) in col.iter().enumerate() {
                kind.check_value(v, &format!("feature {j}, row {i}"))?;
            }
            features.extend(col);
        }
        for (i, &v) in target.iter().enumerate() {
            target_kind.check_value(v, &format!("target, row {i}"))?;
        }
        Ok(Dataset {
            features,
            kinds,
            target,
            target_kind,
            n,
            p,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn kind(&self, j: usize) -> FeatureKind {
        self.kinds[j]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn target_kind(&self) -> FeatureKind {
        self.target_kind
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.features[j * self.n..(j + 1) * self.n]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.features[j * self.n + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.p).map(|j| self.get(i, j)).collect()
    }

    /// Row-major copy of the feature matrix.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i)).collect()
    }

    /// Row `i` with feature `j` removed.
    pub fn row_without(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.p)
            .filter(|&c| c != j)
            .map(|c| self.get(i, c))
            .collect()
    }

    /// The rows selected by `idx`, in that order. May hold a single row.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n) {
            return Err(Error::InvalidData(format!(
                "row index {bad} out of range for {} rows",
                self.n
            )));
        }
        let columns = (0..self.p)
            .map(|j| {
                let col = self.column(j);
                idx.iter().map(|&i| col[i]).collect()
            })
            .collect();
        let target = idx.iter().map(|&i| self.target[i]).collect();
        Self::build(columns, self.kinds.clone(), target, self.target_kind)
    }

    /// Same features with a replacement target column.
    pub fn with_target(&self, target: Vec<f64>, target_kind: FeatureKind) -> Result<Dataset> {
        if target.len() != self.n {
            return Err(Error::InvalidData(format!(
                "target has {} entries, expected {}",
                target.len(),
                self.n
            )));
        }
        let columns = (0..self.p).map(|j| self.column(j).to_vec()).collect();
        Self::build(columns, self.kinds.clone(), target, target_kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Number of training rows for a split of `n` rows.
///
/// Floor of `fraction * n`, with a small tolerance so that products such as
/// `0.29 * 100` land on the intended integer.
pub fn train_size(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Uniformly random partition of `0..n` into train and evaluation indices.
///
/// Both index lists are returned sorted.
pub fn split_dataset(data: &Dataset, fraction: f64, seed: u64) -> Result<SplitIndices> {
    split_indices(data.n(), fraction, seed)
}

pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n_train = train_size(n, fraction).min(n);
    if n_train == 0 || n_train == n {
        return Err(Error::DegenerateSplit {
            train: n_train,
            eval: n - n_train,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let mut train = perm[..n_train].to_vec();
    let mut eval = perm[n_train..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    Ok(SplitIndices { train, eval })
}
