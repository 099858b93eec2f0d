//! Synthetic data-generating processes with known relevant feature sets.
//!
//! Each generator is a pure function of `(n, seed)`. Alongside the data, every
//! process exposes its exact conditional law `X_j | X_{-j}` (see
//! [`oracle_law`]) so tests can run with a perfect conditional sampler.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::models::Conditional;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpName {
    LinearSparse,
    LinearDense,
    WeakSignal,
    NoiseBlock,
    Correlated,
    Friedman1,
    Friedman2,
    Friedman3,
    Xor,
    AdditiveInteraction,
    Threshold,
    ConditionalNull,
}

/// Rows of the benchmark table, in table order.
pub const TABLE1: [DgpName; 11] = [
    DgpName::LinearSparse,
    DgpName::LinearDense,
    DgpName::WeakSignal,
    DgpName::NoiseBlock,
    DgpName::Correlated,
    DgpName::Friedman1,
    DgpName::Friedman2,
    DgpName::Friedman3,
    DgpName::Xor,
    DgpName::Threshold,
    DgpName::ConditionalNull,
];

/// All twelve generators: linear regimes first, then nonlinear.
pub const ALL: [DgpName; 12] = [
    DgpName::LinearSparse,
    DgpName::LinearDense,
    DgpName::WeakSignal,
    DgpName::NoiseBlock,
    DgpName::Correlated,
    DgpName::Friedman1,
    DgpName::Friedman2,
    DgpName::Friedman3,
    DgpName::Xor,
    DgpName::AdditiveInteraction,
    DgpName::Threshold,
    DgpName::ConditionalNull,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marginal {
    Gaussian,
    Uniform,
}

impl DgpName {
    pub fn as_str(self) -> &'static str {
        match self {
            DgpName::LinearSparse => "linear_sparse",
            DgpName::LinearDense => "linear_dense",
            DgpName::WeakSignal => "weak_signal",
            DgpName::NoiseBlock => "noise_block",
            DgpName::Correlated => "correlated",
            DgpName::Friedman1 => "friedman1",
            DgpName::Friedman2 => "friedman2",
            DgpName::Friedman3 => "friedman3",
            DgpName::Xor => "xor",
            DgpName::AdditiveInteraction => "additive_interaction",
            DgpName::Threshold => "threshold",
            DgpName::ConditionalNull => "conditional_null",
        }
    }

    /// Human-readable row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            DgpName::LinearSparse => "Linear (sparse)",
            DgpName::LinearDense => "Linear (dense)",
            DgpName::WeakSignal => "Weak signal",
            DgpName::NoiseBlock => "Noise block",
            DgpName::Correlated => "Correlated linear",
            DgpName::Friedman1 => "Friedman 1",
            DgpName::Friedman2 => "Friedman 2",
            DgpName::Friedman3 => "Friedman 3",
            DgpName::Xor => "XOR interaction",
            DgpName::AdditiveInteraction => "Additive + interaction",
            DgpName::Threshold => "Threshold feature",
            DgpName::ConditionalNull => "Conditional null",
        }
    }

    /// Stable numeric tag used in seed paths.
    pub fn id(self) -> u64 {
        ALL.iter().position(|&d| d == self).unwrap() as u64
    }

    pub fn p(self) -> usize {
        match self {
            DgpName::LinearSparse => 10,
            DgpName::LinearDense => 5,
            DgpName::WeakSignal => 5,
            DgpName::NoiseBlock => 20,
            DgpName::Correlated => 5,
            DgpName::Friedman1 | DgpName::Friedman2 | DgpName::Friedman3 => 10,
            DgpName::Xor => 5,
            DgpName::AdditiveInteraction => 5,
            DgpName::Threshold => 5,
            DgpName::ConditionalNull => 2,
        }
    }

    pub fn relevant_set(self) -> Vec<usize> {
        match self {
            DgpName::LinearSparse => vec![0, 1, 2],
            DgpName::LinearDense => (0..5).collect(),
            DgpName::WeakSignal => vec![0, 1],
            DgpName::NoiseBlock => vec![0, 1],
            DgpName::Correlated => vec![0],
            DgpName::Friedman1 | DgpName::Friedman2 => (0..5).collect(),
            DgpName::Friedman3 => (0..4).collect(),
            DgpName::Xor => vec![0, 1],
            DgpName::AdditiveInteraction => vec![0, 1, 2],
            DgpName::Threshold => vec![0],
            DgpName::ConditionalNull => vec![0],
        }
    }

    pub fn noise_sd(self) -> f64 {
        match self {
            DgpName::Xor => 0.0,
            DgpName::Threshold => 0.1,
            _ => 1.0,
        }
    }

    pub fn target_kind(self) -> FeatureKind {
        match self {
            DgpName::Xor => FeatureKind::Categorical { levels: 2 },
            _ => FeatureKind::Continuous,
        }
    }

    /// True for the generators whose response is linear in the features.
    pub fn is_linear(self) -> bool {
        matches!(
            self,
            DgpName::LinearSparse
                | DgpName::LinearDense
                | DgpName::WeakSignal
                | DgpName::NoiseBlock
                | DgpName::Correlated
        )
    }

    fn marginal(self) -> Marginal {
        match self {
            DgpName::Friedman1 | DgpName::Friedman2 | DgpName::Friedman3 | DgpName::Threshold => {
                Marginal::Uniform
            }
            _ => Marginal::Gaussian,
        }
    }

    /// Whether features 0 and 1 form the `X2 = X1 + 0.1 e` Gaussian pair.
    fn has_proxy_pair(self) -> bool {
        matches!(self, DgpName::Correlated | DgpName::ConditionalNull)
    }

    pub fn spec(self, n: usize) -> DgpSpec {
        DgpSpec {
            name: self,
            n,
            p: self.p(),
            relevant_set: self.relevant_set(),
            noise_sd: self.noise_sd(),
        }
    }
}

impl fmt::Display for DgpName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DgpName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL.iter()
            .copied()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::UnknownDgp(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: DgpName,
    pub n: usize,
    pub p: usize,
    /// 0-based indices of the conditionally relevant features.
    pub relevant_set: Vec<usize>,
    pub noise_sd: f64,
}

impl DgpSpec {
    pub fn is_relevant(&self, j: usize) -> bool {
        self.relevant_set.contains(&j)
    }
}

#[derive(Debug, Clone)]
pub struct DgpInstance {
    pub data: Dataset,
    pub spec: DgpSpec,
}

/// Standard deviation of the proxy noise in `X2 = X1 + 0.1 e`.
const PROXY_SD: f64 = 0.1;

/// Draws `n` rows from the named generator.
pub fn generate(name: DgpName, n: usize, seed: u64) -> Result<DgpInstance> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need n >= 2 rows, got {n}")));
    }
    let spec = name.spec(n);
    let p = spec.p;
    let mut rng = rng_from_seed(seed);
    let mut columns = vec![Vec::with_capacity(n); p];
    let mut target = Vec::with_capacity(n);
    let mut x = vec![0.0; p];

    for _ in 0..n {
        for v in x.iter_mut() {
            *v = match name.marginal() {
                Marginal::Gaussian => rng.sample(StandardNormal),
                Marginal::Uniform => rng.random::<f64>(),
            };
        }
        if name.has_proxy_pair() {
            // x[1] was drawn as the proxy noise term.
            x[1] = x[0] + PROXY_SD * x[1];
        }
        let eps: f64 = if spec.noise_sd > 0.0 {
            spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let y = response(name, &x) + eps;
        for (col, &v) in columns.iter_mut().zip(&x) {
            col.push(v);
        }
        target.push(y);
    }

    let data = Dataset::from_columns(columns, vec![FeatureKind::Continuous; p], target, name.target_kind())?;
    Ok(DgpInstance { data, spec })
}

/// Noise-free response `f(x)`.
fn response(name: DgpName, x: &[f64]) -> f64 {
    match name {
        DgpName::LinearSparse => 3.0 * x[0] - 2.0 * x[1] + x[2],
        DgpName::LinearDense => x[..5].iter().sum(),
        DgpName::WeakSignal => 0.5 * x[0] + 0.5 * x[1],
        DgpName::NoiseBlock => x[0] + x[1],
        DgpName::Correlated => x[0],
        DgpName::Friedman1 => {
            10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
        }
        DgpName::Friedman2 => x[0].powi(2) + x[1] * x[2] - x[3] + x[4].sin(),
        DgpName::Friedman3 => ((x[0] + x[1]) / (x[2] + 0.1)).atan() + x[3].powi(2),
        DgpName::Xor => ((x[0] > 0.0) ^ (x[1] > 0.0)) as u8 as f64,
        DgpName::AdditiveInteraction => x[0] + x[1] * x[2],
        DgpName::Threshold => (x[0] > 0.5) as u8 as f64,
        DgpName::ConditionalNull => x[0].sin(),
    }
}

/// The exact conditional law of feature `j` given the other features.
///
/// `x_minus_j` holds the remaining `p - 1` features in their original order.
pub fn oracle_law(spec: &DgpSpec, j: usize, x_minus_j: &[f64]) -> Result<Conditional> {
    if j >= spec.p {
        return Err(Error::NoOracle {
            dgp: spec.name.to_string(),
            feature: j,
        });
    }
    if x_minus_j.len() + 1 != spec.p {
        return Err(Error::InvalidData(format!(
            "conditioning row has {} entries, expected {}",
            x_minus_j.len(),
            spec.p - 1
        )));
    }
    let law = match (spec.name.has_proxy_pair(), j) {
        // X2 | X1 = a ~ N(a, 0.01); X1 is the first conditioning entry.
        (true, 1) => Conditional::Gaussian {
            mean: x_minus_j[0],
            sd: PROXY_SD,
        },
        // X1 | X2 = b ~ N(b / 1.01, 1 - 1 / 1.01); X2 is the first conditioning entry.
        (true, 0) => {
            let var_x2 = 1.0 + PROXY_SD * PROXY_SD;
            Conditional::Gaussian {
                mean: x_minus_j[0] / var_x2,
                sd: (1.0 - 1.0 / var_x2).sqrt(),
            }
        }
        _ => match spec.name.marginal() {
            Marginal::Gaussian => Conditional::Gaussian { mean: 0.0, sd: 1.0 },
            Marginal::Uniform => Conditional::Uniform { lo: 0.0, hi: 1.0 },
        },
    };
    Ok(law)
}

/// One exact draw of `X_j` given `X_{-j}`.
pub fn oracle_conditional(spec: &DgpSpec, j: usize, x_minus_j: &[f64], seed: u64) -> Result<f64> {
    Ok(oracle_law(spec, j, x_minus_j)?.sample(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn names_round_trip() {
        for d in ALL {
            assert_eq!(d.as_str().parse::<DgpName>().unwrap(), d);
        }
        assert!(matches!("friedman4".parse::<DgpName>(), Err(Error::UnknownDgp(_))));
    }

    #[test]
    fn specs_are_consistent() {
        for d in ALL {
            let s = d.spec(10);
            assert!(s.relevant_set.iter().all(|&j| j < s.p));
            let inst = generate(d, 10, 3).unwrap();
            assert_eq!(inst.data.p(), s.p);
            assert_eq!(inst.data.n(), 10);
        }
        assert_eq!(TABLE1.len(), 11);
        assert!(!TABLE1.contains(&DgpName::AdditiveInteraction));
    }

    #[test]
    fn generation_is_deterministic() {
        for d in ALL {
            let a = generate(d, 50, 17).unwrap();
            let b = generate(d, 50, 17).unwrap();
            assert_eq!(a.data, b.data);
        }
        assert_ne!(
            generate(DgpName::LinearSparse, 50, 1).unwrap().data,
            generate(DgpName::LinearSparse, 50, 2).unwrap().data
        );
    }

    #[test]
    fn too_few_rows() {
        assert!(generate(DgpName::Xor, 1, 0).is_err());
    }

    #[test]
    fn linear_sparse_correlation() {
        // corr(Y, X1) = 3 / sqrt(9 + 4 + 1 + 1)
        let d = generate(DgpName::LinearSparse, 100_000, 5).unwrap().data;
        let r = corr(d.target(), d.column(0));
        assert!((r - 3.0 / 15f64.sqrt()).abs() < 0.01, "{r}");
    }

    #[test]
    fn correlated_pair_correlation() {
        let d = generate(DgpName::Correlated, 100_000, 6).unwrap().data;
        let r = corr(d.column(0), d.column(1));
        assert!((r - 1.0 / 1.01f64.sqrt()).abs() < 0.005, "{r}");
    }

    #[test]
    fn xor_target_is_balanced_binary() {
        let d = generate(DgpName::Xor, 100_000, 7).unwrap().data;
        assert_eq!(d.target_kind(), FeatureKind::Categorical { levels: 2 });
        let m = d.target().iter().sum::<f64>() / d.n() as f64;
        assert!((m - 0.5).abs() < 0.01, "{m}");
    }

    #[test]
    fn uniform_designs_stay_in_unit_cube() {
        for d in [DgpName::Friedman1, DgpName::Friedman2, DgpName::Friedman3, DgpName::Threshold] {
            let data = generate(d, 2000, 8).unwrap().data;
            for j in 0..data.p() {
                assert!(data.column(j).iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn friedman3_response_is_finite() {
        let d = generate(DgpName::Friedman3, 1_000_000, 9).unwrap().data;
        assert!(d.target().iter().all(|y| y.is_finite()));
    }

    #[test]
    fn oracle_index_out_of_range() {
        let spec = DgpName::ConditionalNull.spec(10);
        assert!(matches!(
            oracle_conditional(&spec, 2, &[0.0], 0),
            Err(Error::NoOracle { feature: 2, .. })
        ));
        assert!(oracle_conditional(&spec, 0, &[0.0, 1.0], 0).is_err());
    }

    #[test]
    fn oracle_proxy_means() {
        let spec = DgpName::ConditionalNull.spec(10);
        let m = 10_000;
        let mean_x2 = (0..m)
            .map(|s| oracle_conditional(&spec, 1, &[2.0], s).unwrap())
            .sum::<f64>()
            / m as f64;
        assert!((mean_x2 - 2.0).abs() < 0.004, "{mean_x2}");
        let mean_x1 = (0..m)
            .map(|s| oracle_conditional(&spec, 0, &[1.01], s).unwrap())
            .sum::<f64>()
            / m as f64;
        assert!((mean_x1 - 1.0).abs() < 0.01, "{mean_x1}");
    }
}
