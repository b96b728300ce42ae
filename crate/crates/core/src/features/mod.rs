//! Log-mel features and the square 3-channel network input.

mod image;
mod mel;
mod pipeline;

pub use image::{normalize, resize_bilinear, resize_to_square, to_feature_tensor, FeatureTensor, Normalization};
pub use mel::{
    compute_logmel, hann, hz_to_mel, mel_to_hz, LogMelExtractor, LogMelSpectrogram, MelConfig, MelFilterbank,
};
pub use pipeline::{FeatureCache, FeaturePipeline};

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid feature config: {0}")]
    ConfigInvalid(String),
    #[error("{samples} samples is shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("feature cache entry {path} is corrupt: {message}")]
    CorruptCache { path: PathBuf, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
