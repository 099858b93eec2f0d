//! Conditional randomization tests for feature relevance.
//!
//! A feature `X_j` is tested for conditional independence from `Y` given the
//! other features by comparing the held-out log predictive density of a
//! fitted model against its density after `X_j` is resampled from an
//! estimate of `p(x_j | x_{-j})`.
//!
//! ```
//! use crt_core::crt::{test_all_features, CrtConfig};
//! use crt_core::dgp::{generate, DgpName};
//! use crt_core::models::{LinearFitter, Basis, OracleFitter};
//!
//! let inst = generate(DgpName::LinearSparse, 200, 7).unwrap();
//! let config = CrtConfig { num_null_draws: 99, ..Default::default() };
//! let tests = test_all_features(
//!     &inst.data,
//!     &config,
//!     &LinearFitter { basis: Basis::Linear },
//!     &OracleFitter { spec: inst.spec.clone() },
//! )
//! .unwrap();
//! let first = tests.results().next().unwrap();
//! assert!(first.p_value < 0.05);
//! ```

pub mod bridge;
pub mod cli;
pub mod crt;
pub mod data;
pub mod dgp;
pub mod error;
pub mod eval;
pub mod io;
pub mod models;
pub mod seed;

pub use crate::crt::{run_crt, test_all_features, test_features, CrtConfig, CrtResult};
pub use crate::data::{Dataset, FeatureKind};
pub use crate::dgp::{generate, DgpName};
pub use crate::error::{Error, Result};
pub use crate::eval::{run_experiment, ExperimentConfig, ExperimentReport};
pub use crate::seed::derive_seed;
