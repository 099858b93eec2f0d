//! Experiment harness: repeated generate/split/test runs over a suite of
//! generators, with per-dataset power and type-I error and pooled p-values.

mod diagnostics;
mod output;
mod table;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeClient, DEFAULT_TIMEOUT};
use crate::crt::{test_all_features, CrtConfig};
use crate::dgp::{generate, DgpName, TABLE1};
use crate::error::{Error, Result};
use crate::models::{
    builtin_model_fitter, ExternalFitter, KnnSamplerFitter, ModelChoice, ModelFitter, OracleFitter,
    SamplerChoice, SamplerFitter,
};
use crate::seed::derive_seed;

pub use diagnostics::{ecdf, ecdf_at, empirical_quantile, ks_statistic, ks_uniform, qq_uniform};
pub use output::{write_bench_outputs, BENCH_FILES};
pub use table::{table_report, RenderedTable, EMPTY_CELL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgp_names: Vec<DgpName>,
    /// Rows per generated dataset.
    pub n: usize,
    pub n_repeats: usize,
    pub crt: CrtConfig,
    pub model_choice: ModelChoice,
    pub sampler_choice: SamplerChoice,
    /// Worker command for external models or samplers.
    pub bridge_command: Option<String>,
    pub bridge_timeout_secs: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dgp_names: TABLE1.to_vec(),
            n: 500,
            n_repeats: 5,
            crt: CrtConfig::default(),
            model_choice: ModelChoice::Auto,
            sampler_choice: SamplerChoice::Oracle,
            bridge_command: None,
            bridge_timeout_secs: DEFAULT_TIMEOUT.as_secs_f64(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.crt.validate()?;
        if self.n_repeats < 1 {
            return Err(Error::InvalidConfig("n_repeats must be >= 1".into()));
        }
        if self.dgp_names.is_empty() {
            return Err(Error::InvalidConfig("no datasets selected".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("n must be >= 2, got {}", self.n)));
        }
        let external = self.model_choice == ModelChoice::External
            || self.sampler_choice == SamplerChoice::External;
        if external && self.bridge_command.is_none() {
            return Err(Error::InvalidConfig(
                "external model or sampler selected without a bridge command".into(),
            ));
        }
        if !(self.bridge_timeout_secs.is_finite() && self.bridge_timeout_secs > 0.0) {
            return Err(Error::InvalidConfig("bridge timeout must be positive".into()));
        }
        Ok(())
    }

    /// Seed for generating dataset `dgp` in repeat `r`.
    pub fn data_seed(&self, dgp: DgpName, repeat: usize) -> u64 {
        derive_seed(self.crt.master_seed, &[dgp.id(), repeat as u64, 0])
    }

    /// Test configuration for dataset `dgp` in repeat `r`.
    pub fn repeat_crt(&self, dgp: DgpName, repeat: usize) -> CrtConfig {
        CrtConfig {
            master_seed: derive_seed(self.crt.master_seed, &[dgp.id(), repeat as u64, 1]),
            ..self.crt.clone()
        }
    }
}

/// One p-value tagged with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRecord {
    pub dataset: DgpName,
    pub repeat: usize,
    pub feature: usize,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset: DgpName,
    pub label: String,
    pub p: usize,
    pub relevant_count: usize,
    /// Mean rejection indicator over relevant (repeat, feature) cells.
    pub power: Option<f64>,
    /// Mean rejection indicator over irrelevant cells; `None` when the
    /// dataset has no irrelevant features.
    pub type1: Option<f64>,
    pub relevant_cells: usize,
    pub irrelevant_cells: usize,
    pub failed_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub dataset: DgpName,
    pub repeat: usize,
    /// `None` when the whole repeat failed.
    pub feature: Option<usize>,
    pub message: String,
    /// The failure came from the bridge worker.
    #[serde(default)]
    pub bridge: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PooledPValues {
    pub relevant: Vec<PValueRecord>,
    pub irrelevant: Vec<PValueRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<DatasetRow>,
    pub pooled: PooledPValues,
    pub failures: Vec<Failure>,
}

impl ExperimentReport {
    pub fn relevant_p_values(&self) -> Vec<f64> {
        self.pooled.relevant.iter().map(|r| r.p_value).collect()
    }

    pub fn irrelevant_p_values(&self) -> Vec<f64> {
        self.pooled.irrelevant.iter().map(|r| r.p_value).collect()
    }

    pub fn row(&self, dataset: DgpName) -> Option<&DatasetRow> {
        self.rows.iter().find(|r| r.dataset == dataset)
    }

    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn has_bridge_failures(&self) -> bool {
        self.failures.iter().any(|f| f.bridge)
    }
}

struct CellOutcome {
    dataset: DgpName,
    repeat: usize,
    records: Vec<(PValueRecord, bool)>,
    failures: Vec<Failure>,
}

fn mean_indicator<'a>(cells: impl Iterator<Item = &'a PValueRecord>) -> (Option<f64>, usize) {
    let (hits, count) = cells.fold((0usize, 0usize), |(h, c), r| (h + r.rejected as usize, c + 1));
    if count == 0 {
        (None, 0)
    } else {
        (Some(hits as f64 / count as f64), count)
    }
}

/// Runs every `(dataset, repeat)` cell and aggregates the results.
///
/// Cells may run in parallel; assembly is keyed by `(dataset, repeat)` order
/// so the report never depends on completion order. Failures are recorded
/// and the run continues.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let client = match &config.bridge_command {
        Some(cmd)
            if config.model_choice == ModelChoice::External
                || config.sampler_choice == SamplerChoice::External =>
        {
            let timeout = Duration::from_secs_f64(config.bridge_timeout_secs);
            Some(Arc::new(Mutex::new(BridgeClient::spawn(cmd, timeout)?)))
        }
        _ => None,
    };

    let cells: Vec<(DgpName, usize)> = config
        .dgp_names
        .iter()
        .flat_map(|&d| (0..config.n_repeats).map(move |r| (d, r)))
        .collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(dgp, repeat)| run_cell(config, client.as_ref(), dgp, repeat))
        .collect();

    let mut pooled = PooledPValues::default();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for &dgp in &config.dgp_names {
        let mine: Vec<&CellOutcome> = outcomes.iter().filter(|o| o.dataset == dgp).collect();
        let relevant: Vec<&PValueRecord> = mine
            .iter()
            .flat_map(|o| o.records.iter().filter(|(_, rel)| *rel).map(|(r, _)| r))
            .collect();
        let irrelevant: Vec<&PValueRecord> = mine
            .iter()
            .flat_map(|o| o.records.iter().filter(|(_, rel)| !*rel).map(|(r, _)| r))
            .collect();
        let (power, relevant_cells) = mean_indicator(relevant.iter().copied());
        let (type1, irrelevant_cells) = mean_indicator(irrelevant.iter().copied());
        let failed_cells: usize = mine.iter().map(|o| o.failures.len()).sum();
        rows.push(DatasetRow {
            dataset: dgp,
            label: dgp.label().to_string(),
            p: dgp.p(),
            relevant_count: dgp.relevant_set().len(),
            power,
            type1,
            relevant_cells,
            irrelevant_cells,
            failed_cells,
        });
        pooled.relevant.extend(relevant.into_iter().cloned());
        pooled.irrelevant.extend(irrelevant.into_iter().cloned());
        for o in &mine {
            failures.extend(o.failures.iter().cloned());
        }
    }
    debug_assert!(outcomes.iter().all(|o| o.repeat < config.n_repeats));
    Ok(ExperimentReport {
        config: config.clone(),
        rows,
        pooled,
        failures,
    })
}

fn run_cell(
    config: &ExperimentConfig,
    client: Option<&Arc<Mutex<BridgeClient>>>,
    dgp: DgpName,
    repeat: usize,
) -> CellOutcome {
    let mut outcome = CellOutcome {
        dataset: dgp,
        repeat,
        records: Vec::new(),
        failures: Vec::new(),
    };
    let whole = |e: Error| Failure {
        dataset: dgp,
        repeat,
        feature: None,
        message: e.to_string(),
        bridge: e.is_bridge(),
    };
    let crt = config.repeat_crt(dgp, repeat);
    let inst = match generate(dgp, config.n, config.data_seed(dgp, repeat)) {
        Ok(i) => i,
        Err(e) => {
            outcome.failures.push(whole(e));
            return outcome;
        }
    };

    let choice = config.model_choice.resolve(inst.data.target_kind(), Some(dgp));
    let external = |seed_tag: u64| -> Result<ExternalFitter> {
        let client = client.ok_or_else(|| Error::InvalidConfig("no bridge worker running".into()))?;
        Ok(ExternalFitter::shared(
            Arc::clone(client),
            crt.quantile_grid_size,
            derive_seed(crt.master_seed, &[seed_tag]),
        ))
    };
    let model_fitter: Result<Box<dyn ModelFitter>> = match choice {
        ModelChoice::External => external(2).map(|f| Box::new(f) as Box<dyn ModelFitter>),
        other => builtin_model_fitter(other),
    };
    let sampler_fitter: Result<Box<dyn SamplerFitter>> = match config.sampler_choice {
        SamplerChoice::Oracle => Ok(Box::new(OracleFitter {
            spec: inst.spec.clone(),
        })),
        SamplerChoice::Knn => Ok(Box::new(KnnSamplerFitter {
            grid_size: crt.quantile_grid_size,
            k: None,
        })),
        SamplerChoice::External => external(3).map(|f| Box::new(f) as Box<dyn SamplerFitter>),
    };
    let (model_fitter, sampler_fitter) = match (model_fitter, sampler_fitter) {
        (Ok(m), Ok(s)) => (m, s),
        (Err(e), _) | (_, Err(e)) => {
            outcome.failures.push(whole(e));
            return outcome;
        }
    };

    match test_all_features(&inst.data, &crt, model_fitter.as_ref(), sampler_fitter.as_ref()) {
        Ok(tests) => {
            for o in tests.outcomes {
                match o.result {
                    Ok(res) => outcome.records.push((
                        PValueRecord {
                            dataset: dgp,
                            repeat,
                            feature: o.feature_index,
                            p_value: res.p_value,
                            rejected: res.rejects(crt.alpha),
                        },
                        inst.spec.is_relevant(o.feature_index),
                    )),
                    Err(e) => outcome.failures.push(Failure {
                        dataset: dgp,
                        repeat,
                        feature: Some(o.feature_index),
                        message: e.to_string(),
                        bridge: e.is_bridge(),
                    }),
                }
            }
        }
        Err(e) => outcome.failures.push(whole(e)),
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dgps: Vec<DgpName>) -> ExperimentConfig {
        ExperimentConfig {
            dgp_names: dgps,
            n: 100,
            n_repeats: 2,
            crt: CrtConfig {
                num_null_draws: 19,
                master_seed: 5,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn dense_design_has_no_type1_cells() {
        let report = run_experiment(&small(vec![DgpName::LinearDense])).unwrap();
        let row = report.row(DgpName::LinearDense).unwrap();
        assert_eq!(row.type1, None);
        assert_eq!(row.irrelevant_cells, 0);
        assert_eq!(row.relevant_cells, 10);
        assert!(report.pooled.irrelevant.is_empty());
    }

    #[test]
    fn cells_are_binary_and_rates_bounded() {
        let report = run_experiment(&small(vec![DgpName::WeakSignal, DgpName::Threshold])).unwrap();
        for row in &report.rows {
            for v in [row.power, row.type1].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&v));
                let cells = if Some(v) == row.power { row.relevant_cells } else { row.irrelevant_cells };
                let hits = v * cells as f64;
                assert!((hits - hits.round()).abs() < 1e-9);
            }
        }
        assert_eq!(report.pooled.relevant.len() + report.pooled.irrelevant.len(), 2 * 5 * 2);
    }

    #[test]
    fn external_without_command_is_rejected() {
        let cfg = ExperimentConfig {
            model_choice: ModelChoice::External,
            ..small(vec![DgpName::Xor])
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn model_failures_are_recorded_not_fatal() {
        // A linear model cannot fit the categorical XOR target.
        let cfg = ExperimentConfig {
            model_choice: ModelChoice::Linear,
            ..small(vec![DgpName::Xor, DgpName::LinearSparse])
        };
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.failures.len(), 2);
        assert!(report.failures.iter().all(|f| f.dataset == DgpName::Xor && f.feature.is_none()));
        assert!(report.row(DgpName::LinearSparse).unwrap().power.is_some());
        assert_eq!(report.row(DgpName::Xor).unwrap().power, None);
    }
}
