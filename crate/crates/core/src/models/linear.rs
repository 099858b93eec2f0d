//! Ordinary least squares with a Gaussian predictive distribution.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::PredictiveModel;
use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};

pub const OLS_VARIANCE_FLOOR: f64 = 1e-12;

/// Eigenvalue ratio below which the centred Gram matrix counts as singular.
const RANK_TOLERANCE: f64 = 1e-10;

#[inline]
pub fn gaussian_log_pdf(y: f64, mean: f64, var: f64) -> f64 {
    let r = y - mean;
    -0.5 * (2.0 * PI * var).ln() - r * r / (2.0 * var)
}

/// Feature expansion applied before the least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Linear,
    /// Linear terms plus all squares and pairwise products.
    Quadratic,
}

impl Basis {
    pub fn width(self, p: usize) -> usize {
        match self {
            Basis::Linear => p,
            Basis::Quadratic => p + p * (p + 1) / 2,
        }
    }

    pub fn expand_into(self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(x);
        if self == Basis::Quadratic {
            for a in 0..x.len() {
                for b in a..x.len() {
                    out.push(x[a] * x[b]);
                }
            }
        }
    }
}

/// Least-squares fit `y ~ intercept + coef . x`.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    /// Residual variance with denominator `n - d - 1`, floored.
    pub residual_var: f64,
    /// Whether the ridge fallback was needed.
    pub ridge: bool,
}

impl OlsFit {
    /// Fits on design rows of equal width `d`. Needs at least `d + 2` rows.
    ///
    /// A (numerically) rank-deficient design gets a ridge penalty of
    /// `1e-6 * trace(Xc'Xc) / d` on the centred slopes; the intercept is never
    /// penalised.
    pub fn fit(rows: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
        let n = rows.len();
        if n != y.len() {
            return Err(Error::model(format!("{n} rows but {} targets", y.len())));
        }
        let d = rows.first().map_or(0, Vec::len);
        if n < d + 2 {
            return Err(Error::model(format!(
                "least squares with {d} features needs at least {} rows, got {n}",
                d + 2
            )));
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        if d == 0 {
            let ss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
            return Ok(OlsFit {
                intercept: y_mean,
                coef: Vec::new(),
                residual_var: (ss / (n - 1) as f64).max(OLS_VARIANCE_FLOOR),
                ridge: false,
            });
        }

        let x_mean: Vec<f64> = (0..d)
            .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64)
            .collect();
        let xc = DMatrix::from_fn(n, d, |i, c| rows[i][c] - x_mean[c]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let mut gram = xc.tr_mul(&xc);
        let rhs = xc.tr_mul(&yc);

        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max_eig = eig.iter().cloned().fold(0.0_f64, f64::max);
        let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let trace = gram.trace();
        let mut ridge = false;
        let coef = if trace <= 0.0 {
            // Every column is constant: no slope is identifiable.
            ridge = true;
            DVector::zeros(d)
        } else {
            if min_eig <= RANK_TOLERANCE * max_eig {
                ridge = true;
                let lambda = 1e-6 * trace / d as f64;
                for c in 0..d {
                    gram[(c, c)] += lambda;
                }
            }
            match gram.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => gram
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::model("singular least-squares system"))?,
            }
        };

        let intercept = y_mean - coef.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
        let coef: Vec<f64> = coef.iter().copied().collect();
        let ss: f64 = rows
            .iter()
            .zip(y)
            .map(|(r, &v)| {
                let pred = intercept + r.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
                (v - pred).powi(2)
            })
            .sum();
        let dof = (n - d - 1) as f64;
        Ok(OlsFit {
            intercept,
            coef,
            residual_var: (ss / dof).max(OLS_VARIANCE_FLOOR),
            ridge,
        })
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Gaussian predictive `N(ols_mean(x), residual_var)` over a feature basis.
#[derive(Debug, Clone)]
pub struct LinearGaussian {
    basis: Basis,
    p: usize,
    fit: OlsFit,
}

impl LinearGaussian {
    pub fn fit(train: &Dataset, basis: Basis) -> Result<LinearGaussian> {
        if train.target_kind() != FeatureKind::Continuous {
            return Err(Error::model("linear-Gaussian model needs a continuous target"));
        }
        let mut buf = Vec::with_capacity(basis.width(train.p()));
        let rows: Vec<Vec<f64>> = (0..train.n())
            .map(|i| {
                basis.expand_into(&train.row(i), &mut buf);
                buf.clone()
            })
            .collect();
        let fit = OlsFit::fit(&rows, train.target())?;
        Ok(LinearGaussian {
            basis,
            p: train.p(),
            fit,
        })
    }

    pub fn ols(&self) -> &OlsFit {
        &self.fit
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.basis.width(self.p));
        self.basis.expand_into(x, &mut buf);
        self.fit.predict(&buf)
    }
}

impl PredictiveModel for LinearGaussian {
    fn target_kind(&self) -> FeatureKind {
        FeatureKind::Continuous
    }

    fn log_density(&self, x: &[f64], y: f64) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::model(format!(
                "row has {} features, model expects {}",
                x.len(),
                self.p
            )));
        }
        Ok(gaussian_log_pdf(y, self.mean(x), self.fit.residual_var))
    }
}

pub fn fit_linear_gaussian(train: &Dataset) -> Result<LinearGaussian> {
    LinearGaussian::fit(train, Basis::Linear)
}

pub fn fit_poly2_gaussian(train: &Dataset) -> Result<LinearGaussian> {
    LinearGaussian::fit(train, Basis::Quadratic)
}
