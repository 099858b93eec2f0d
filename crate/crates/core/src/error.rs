use thiserror::Error;

use crate::bridge::BridgeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate split: {train} train rows, {eval} evaluation rows")]
    DegenerateSplit { train: usize, eval: usize },

    #[error("unknown data-generating process `{0}`")]
    UnknownDgp(String),

    #[error("no oracle conditional for feature {feature} of `{dgp}`")]
    NoOracle { dgp: String, feature: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("non-finite statistic at null draw {draw} for feature {feature}")]
    NonFiniteStatistic { feature: usize, draw: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Bridge(#[from] BridgeError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub fn is_bridge(&self) -> bool {
        matches!(self, Error::Bridge(_))
    }
}
