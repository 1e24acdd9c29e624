//! Debate trigger classifier: standardized features through a shared MLP
//! encoder into a correctness head and a hesitation head, fused with the
//! LLM's own confidence in logit space.

mod adam;
mod model;
mod network;
mod scaler;
mod train;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use model::{load_model, save_model, DecisionModel, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use network::{logit, sigmoid, BatchOutput, DenseLayer, ForwardCache, Fusion, Grads, Head, Mode, Network, NetworkConfig, BN_EPS};
pub use scaler::{standardize, ScalerStats, STD_FLOOR};
pub use train::{train, train_with_observer, EpochMetrics, TrainConfig, TrainOutcome};

use crate::features::FeatureVector;
use crate::loss::LossError;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("feature manifest mismatch: expected {expected}, found {found}")]
    ManifestMismatch { expected: String, found: String },
    #[error("{what} mismatch: expected {expected}, found {found}")]
    VersionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model file {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// One training example: features and whether the single-agent answer was correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub y: u8,
}

/// All intermediate quantities of a single inference pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierForward {
    pub l_llm: f64,
    pub l_p: f64,
    pub l_u: f64,
    pub p: f64,
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Skip,
    TriggerDebate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    pub p: f64,
    pub u: f64,
}

/// Trigger iff `p < tau`; equality skips.
pub fn decide_threshold(p: f64, tau: f64) -> Action {
    if p < tau {
        Action::TriggerDebate
    } else {
        Action::Skip
    }
}
