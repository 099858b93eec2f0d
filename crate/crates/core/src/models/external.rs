//! Adapters exposing a bridge worker as a predictive model and a sampler.

use std::sync::{Arc, Mutex, MutexGuard};

use serde_json::Value;

use super::{
    midpoint_levels, Conditional, ConditionalSampler, ModelFitter, PredictiveModel, SamplerFitter,
};
use crate::bridge::{BridgeClient, BridgeError};
use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

type SharedClient = Arc<Mutex<BridgeClient>>;

fn lock(client: &SharedClient) -> Result<MutexGuard<'_, BridgeClient>> {
    client.lock().map_err(|_| {
        Error::Bridge(BridgeError::Crashed {
            stderr: "bridge client lock poisoned".into(),
        })
    })
}

pub struct ExternalModel {
    client: SharedClient,
    model_id: Value,
    kind: FeatureKind,
    p: usize,
}

impl PredictiveModel for ExternalModel {
    fn target_kind(&self) -> FeatureKind {
        self.kind
    }

    fn log_density(&self, x: &[f64], y: f64) -> Result<f64> {
        Ok(self.log_density_batch(&[x.to_vec()], &[y])?[0])
    }

    fn log_density_batch(&self, rows: &[Vec<f64>], ys: &[f64]) -> Result<Vec<f64>> {
        if rows.len() != ys.len() {
            return Err(Error::model(format!("{} rows but {} targets", rows.len(), ys.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != self.p) {
            return Err(Error::model(format!(
                "row has {} features, model expects {}",
                r.len(),
                self.p
            )));
        }
        Ok(lock(&self.client)?.log_density(&self.model_id, rows, ys)?)
    }
}

pub struct ExternalSampler {
    client: SharedClient,
    model_id: Value,
    kind: FeatureKind,
    levels: Vec<f64>,
}

impl ConditionalSampler for ExternalSampler {
    fn kind(&self) -> FeatureKind {
        self.kind
    }

    fn conditional(&self, x_minus_j: &[f64]) -> Result<Conditional> {
        Ok(self
            .conditional_batch(&[x_minus_j.to_vec()])?
            .pop()
            .expect("one row in, one row out"))
    }

    fn conditional_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<Conditional>> {
        let mut client = lock(&self.client)?;
        match self.kind {
            FeatureKind::Continuous => Ok(client
                .quantiles(&self.model_id, rows, &self.levels)?
                .into_iter()
                .map(|values| Conditional::Grid { values })
                .collect()),
            FeatureKind::Categorical { levels } => Ok(client
                .class_probs(&self.model_id, rows, levels)?
                .into_iter()
                .map(|probs| Conditional::Categorical { probs })
                .collect()),
        }
    }
}

/// Fits models and samplers inside a bridge worker.
///
/// Fit requests carry seeds derived from `seed` so that deterministic workers
/// replay identically.
pub struct ExternalFitter {
    client: SharedClient,
    grid_size: usize,
    seed: u64,
}

impl ExternalFitter {
    pub fn new(client: BridgeClient, grid_size: usize, seed: u64) -> Self {
        ExternalFitter {
            client: Arc::new(Mutex::new(client)),
            grid_size,
            seed,
        }
    }

    /// A fitter over a client shared with other fitters.
    pub fn shared(client: Arc<Mutex<BridgeClient>>, grid_size: usize, seed: u64) -> Self {
        ExternalFitter {
            client,
            grid_size,
            seed,
        }
    }
}

impl ModelFitter for ExternalFitter {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn PredictiveModel>> {
        let model_id = lock(&self.client)?.fit_y(
            &train.rows(),
            train.target(),
            train.target_kind(),
            derive_seed(self.seed, &[0]),
        )?;
        Ok(Box::new(ExternalModel {
            client: Arc::clone(&self.client),
            model_id,
            kind: train.target_kind(),
            p: train.p(),
        }))
    }
}

impl SamplerFitter for ExternalFitter {
    fn fit(&self, train: &Dataset, j: usize) -> Result<Box<dyn ConditionalSampler>> {
        if j >= train.p() {
            return Err(Error::InvalidConfig(format!("feature {j} out of range")));
        }
        let rows: Vec<Vec<f64>> = (0..train.n()).map(|i| train.row_without(i, j)).collect();
        let kind = train.kind(j);
        let model_id = lock(&self.client)?.fit_conditional(
            &rows,
            train.column(j),
            kind,
            derive_seed(self.seed, &[1, j as u64]),
        )?;
        Ok(Box::new(ExternalSampler {
            client: Arc::clone(&self.client),
            model_id,
            kind,
            levels: midpoint_levels(self.grid_size),
        }))
    }
}
