//! Dataset manifests, official folds, and waveform standardization.

mod folds;
mod labels;
mod manifest;
mod resample;
mod standardize;
pub mod synthetic;
mod wav;

pub use folds::{resolve_folds, resolve_folds_with, FoldSplit, SplitIndices, ValidationSelector};
pub use labels::{ESC10_LABELS, ESC50_LABELS, US8K_LABELS};
pub use manifest::{load_manifest, ClipRecord, DatasetKind, Manifest};
pub use resample::SincResampler;
pub use standardize::{standardize, WaveCache, Waveform, TARGET_SAMPLE_RATE};
pub use wav::{decode_wav, write_wav_f32, write_wav_i16, DecodedAudio};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("metadata is missing column `{0}`")]
    MissingColumn(String),
    #[error("label `{label}` is not part of the {kind} label set")]
    UnknownLabel { label: String, kind: DatasetKind },
    #[error("cannot read metadata {path}: {source}")]
    MetadataUnreadable { path: PathBuf, source: csv::Error },
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("fold {fold} outside 1..={num_folds}")]
    InvalidFold { fold: usize, num_folds: usize },
    #[error("cannot decode {path}: {message}")]
    DecodeFailure { path: PathBuf, message: String },
    #[error("unsupported encoding in {path}: {message}")]
    UnsupportedEncoding { path: PathBuf, message: String },
    #[error("cache entry {path} is corrupt: {message}")]
    CorruptCache { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
