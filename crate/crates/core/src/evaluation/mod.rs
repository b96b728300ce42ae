//! Accuracy, cross-validation aggregation, comparisons, embeddings and
//! t-SNE.

mod embeddings;
mod metrics;
pub mod tsne;

pub use crate::training::FoldResult;
pub use embeddings::{export_embeddings, EmbeddingSet, Tap};
pub use metrics::{
    accuracy, aggregate, compare, format_hundredths, percent_hundredths, AblationCell, AblationGrid, Comparison,
    MetricsReport, SeedSummary,
};
pub use tsne::{tsne, TsneError, TsneParams, TsneResult};

use std::path::Path;

use thiserror::Error;

use crate::fsutil::atomic_write;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {targets} targets")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("fold {fold} missing for seed {seed}")]
    MissingFold { fold: usize, seed: u64 },
    #[error("fold {fold} given twice for seed {seed}")]
    DuplicateFold { fold: usize, seed: u64 },
    #[error("fold {fold} was not requested (seed {seed})")]
    UnexpectedFold { fold: usize, seed: u64 },
    #[error("reports are not comparable: {0}")]
    IncomparableReports(String),
    #[error("invalid embeddings: {0}")]
    InvalidEmbeddings(String),
    #[error(transparent)]
    Tsne(#[from] TsneError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// t-SNE of an embedding set, labels carried through.
pub fn tsne_embeddings(e: &EmbeddingSet, params: &TsneParams) -> Result<(TsneResult, Vec<String>), EvalError> {
    Ok((tsne(&e.vectors, params)?, e.labels.clone()))
}

/// `label,x,y`.
pub fn write_tsne_csv(path: &Path, labels: &[String], result: &TsneResult) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "x", "y"])?;
    for (i, label) in labels.iter().enumerate() {
        let row = result.coords.outer(i);
        w.write_record([label.clone(), format!("{:e}", row[0]), format!("{:e}", row[1])])?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
    atomic_write(path, &bytes)?;
    Ok(())
}
