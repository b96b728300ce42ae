//! Loss, the single-stage trainer, and the baseline / coarse-to-fine fold
//! runners.

mod loss;
mod runs;
mod source;
mod stage;

pub use loss::{cross_entropy, cross_entropy_with_grad, CLAMP};
pub use runs::{backbone_bits_equal, fine_examples, run_baseline, run_echo, FoldResult, RunMode, RunSettings};
pub use source::{batch_tensor, PipelineSource, SampleSource, SyntheticSource};
pub use stage::{best_epoch_of, evaluate_split, train_stage, EpochStats, Example, SplitEval, StageOptions, TrainHistory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureError;
use crate::model::ModelError;
use crate::ontology::OntologyError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: predicted {predicted:?}, target {target:?}")]
    ShapeMismatch { predicted: Vec<usize>, target: Vec<usize> },
    #[error("invalid loss input: {0}")]
    InvalidLossInput(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("label index {index} outside a {classes}-class head")]
    LabelOutOfRange { index: usize, classes: usize },
    #[error("no input available for `{0}`")]
    UnknownSample(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("backbone changed across the head swap: {0}")]
    HandoffMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: AdamParams,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-4,
            epochs: 50,
            optimizer: AdamParams::default(),
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidHyperparams("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidHyperparams(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidHyperparams("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Early-stopping patience for the coarse stage.
pub const COARSE_PATIENCE: usize = 10;
