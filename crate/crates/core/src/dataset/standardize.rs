use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::resample::{KAISER_BETA, ROLLOFF, ZERO_CROSSINGS};
use super::wav::{decode_wav, DecodedAudio};
use super::{ClipRecord, DatasetError, Manifest, SincResampler};
use crate::fsutil::{atomic_write, f32_from_le_bytes, f32_to_le_bytes, sha256_hex};

pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// Bumped whenever standardization output could change.
const PREPROC_VERSION: u32 = 1;

/// Fixed-length mono audio at [`TARGET_SAMPLE_RATE`].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub source_clip_id: String,
}

/// Sample count for a clip length at the target rate.
pub fn target_len(clip_length_s: f64) -> usize {
    (clip_length_s * TARGET_SAMPLE_RATE as f64).round() as usize
}

/// Downmix, resample to 16 kHz, then zero-pad the tail or truncate to
/// exactly `clip_length_s` seconds.
pub fn standardize_audio(audio: &DecodedAudio, clip_length_s: f64) -> Vec<f32> {
    let mono = audio.to_mono();
    let mut out = if audio.sample_rate_hz == TARGET_SAMPLE_RATE {
        mono
    } else {
        SincResampler::new(audio.sample_rate_hz, TARGET_SAMPLE_RATE).process(&mono)
    };
    out.resize(target_len(clip_length_s), 0.0);
    out
}

/// Decodes and standardizes one clip without touching any cache.
pub fn standardize(record: &ClipRecord, manifest: &Manifest) -> Result<Waveform, DatasetError> {
    let audio = decode_wav(&record.file_path)?;
    Ok(Waveform {
        samples: standardize_audio(&audio, manifest.clip_length_s),
        sample_rate_hz: TARGET_SAMPLE_RATE,
        source_clip_id: record.clip_id.clone(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    clip_id: String,
    sample_rate_hz: u32,
    num_samples: usize,
    preproc_hash: String,
}

/// On-disk cache: `<root>/<preproc-hash>/<clip_id>.f32` plus a `.json`
/// sidecar.
#[derive(Clone, Debug)]
pub struct WaveCache {
    dir: PathBuf,
    hash: String,
}

impl WaveCache {
    pub fn new(root: impl AsRef<Path>) -> Self {
        let hash = Self::preproc_hash();
        Self {
            dir: root.as_ref().join(&hash),
            hash,
        }
    }

    /// Digest of everything that determines standardized samples.
    pub fn preproc_hash() -> String {
        let desc = format!(
            "standardize v{PREPROC_VERSION}; rate {TARGET_SAMPLE_RATE}; mono=mean; pad=tail-zero; \
             sinc zc={ZERO_CROSSINGS} rolloff={ROLLOFF} kaiser={KAISER_BETA}"
        );
        sha256_hex(desc.as_bytes())[..16].to_string()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, clip_id: &str) -> (PathBuf, PathBuf) {
        (
            self.dir.join(format!("{clip_id}.f32")),
            self.dir.join(format!("{clip_id}.json")),
        )
    }

    pub fn load(&self, clip_id: &str) -> Result<Option<Waveform>, DatasetError> {
        let (blob, side) = self.paths(clip_id);
        if !blob.exists() || !side.exists() {
            return Ok(None);
        }
        let corrupt = |message: String| DatasetError::CorruptCache {
            path: blob.clone(),
            message,
        };
        let meta: Sidecar =
            serde_json::from_slice(&std::fs::read(&side)?).map_err(|e| corrupt(format!("sidecar: {e}")))?;
        if meta.preproc_hash != self.hash || meta.clip_id != clip_id {
            return Err(corrupt("sidecar does not match this cache".into()));
        }
        let samples = f32_from_le_bytes(&std::fs::read(&blob)?).ok_or_else(|| corrupt("ragged blob".into()))?;
        if samples.len() != meta.num_samples {
            return Err(corrupt(format!(
                "expected {} samples, found {}",
                meta.num_samples,
                samples.len()
            )));
        }
        Ok(Some(Waveform {
            samples,
            sample_rate_hz: meta.sample_rate_hz,
            source_clip_id: clip_id.to_string(),
        }))
    }

    pub fn store(&self, w: &Waveform) -> Result<(), DatasetError> {
        let (blob, side) = self.paths(&w.source_clip_id);
        let meta = Sidecar {
            clip_id: w.source_clip_id.clone(),
            sample_rate_hz: w.sample_rate_hz,
            num_samples: w.samples.len(),
            preproc_hash: self.hash.clone(),
        };
        // Blob first: a sidecar only ever describes a complete blob.
        atomic_write(&blob, &f32_to_le_bytes(&w.samples))?;
        atomic_write(&side, &serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    /// Cached standardization; a corrupt entry is recomputed and replaced.
    pub fn standardize(&self, record: &ClipRecord, manifest: &Manifest) -> Result<Waveform, DatasetError> {
        match self.load(&record.clip_id) {
            Ok(Some(w)) if w.samples.len() == target_len(manifest.clip_length_s) => return Ok(w),
            Ok(_) => {}
            Err(DatasetError::CorruptCache { path, message }) => {
                log::warn!("recomputing {}: {message}", path.display());
            }
            Err(e) => return Err(e),
        }
        let w = standardize(record, manifest)?;
        self.store(&w)?;
        Ok(w)
    }
}
