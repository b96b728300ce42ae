//! Experiment configs, the run ledger, and fold × seed orchestration.

mod config;
mod ledger;
mod runner;

pub use config::{DataConfig, ExperimentConfig, LlmConfig, DEFAULT_IMAGE_SIZE, DEFAULT_MAX_RETRIES};
pub use ledger::{cell_key, update_ledger, Cell, CellStatus, LedgerLock, RunLedger};
pub use runner::{
    ablation_dir, cell_embeddings, evaluate_cell, final_stage, load_cell_model, resolve_ontology, run_ablation, run_experiment, write_report, PreparedData, RunOptions,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::evaluation::EvalError;
use crate::features::FeatureError;
use crate::model::ModelError;
use crate::ontology::OntologyError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {message}")]
    SchemaViolation { keys: Vec<String>, message: String },
    #[error("{path} belongs to config {found}, not {expected}")]
    LedgerMismatch { path: PathBuf, found: String, expected: String },
    #[error("illegal ledger transition: {0}")]
    LedgerTransition(String),
    #[error("stopped after {completed} cells; {remaining} still pending")]
    Interrupted { completed: usize, remaining: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// 2 config, 3 data, 4 training, 5 ontology.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::SchemaViolation { .. } | ExperimentError::LedgerMismatch { .. } => 2,
            ExperimentError::Dataset(_) | ExperimentError::Feature(_) => 3,
            ExperimentError::Ontology(_) => 5,
            ExperimentError::Train(t) => match t {
                TrainError::Ontology(_) => 5,
                TrainError::Feature(_) | TrainError::UnknownSample(_) => 3,
                _ => 4,
            },
            ExperimentError::Eval(EvalError::Train(TrainError::Feature(_))) => 3,
            ExperimentError::Model(
                ModelError::UnknownBackbone(_) | ModelError::EmbeddingDimMismatch { .. } | ModelError::InvalidHead(_),
            ) => 2,
            _ => 4,
        }
    }
}
