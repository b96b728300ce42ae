use std::path::{Path, PathBuf};

use echo_nn::Tensor;
use serde::{Deserialize, Serialize};

use super::image::{resize_to_square, to_feature_tensor, FeatureTensor, Normalization};
use super::mel::{LogMelExtractor, MelConfig};
use super::FeatureError;
use crate::dataset::{ClipRecord, Manifest, WaveCache, Waveform};
use crate::fsutil::{atomic_write, f32_from_le_bytes, f32_to_le_bytes, sha256_hex};

/// Waveform → log-mel → square image → normalized 3-channel tensor, with
/// optional waveform and tensor caches.
pub struct FeaturePipeline {
    mel: MelConfig,
    normalization: Normalization,
    image_size: usize,
    extractor: LogMelExtractor<f32>,
    waves: Option<WaveCache>,
    tensors: Option<FeatureCache>,
}

impl FeaturePipeline {
    pub fn new(mel: &MelConfig, normalization: Normalization, image_size: usize) -> Result<Self, FeatureError> {
        if image_size == 0 {
            return Err(FeatureError::ConfigInvalid("image_size must be positive".into()));
        }
        Ok(Self {
            mel: mel.clone(),
            normalization,
            image_size,
            extractor: LogMelExtractor::new(mel)?,
            waves: None,
            tensors: None,
        })
    }

    /// Enables both caches below `root`.
    pub fn with_cache(mut self, root: impl AsRef<Path>) -> Self {
        let root = root.as_ref();
        self.waves = Some(WaveCache::new(root));
        self.tensors = Some(FeatureCache::new(root, self.key()));
        self
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// Digest of everything that shapes the output tensor.
    pub fn key(&self) -> String {
        let desc = format!(
            "{}|{:?}|{}|{}",
            self.mel.config_hash(),
            self.normalization,
            self.image_size,
            WaveCache::preproc_hash()
        );
        sha256_hex(desc.as_bytes())[..16].to_string()
    }

    pub fn from_waveform(&self, w: &Waveform) -> Result<FeatureTensor<f32>, FeatureError> {
        let spec = self.extractor.compute(&w.samples)?;
        let square = resize_to_square(&spec.values, spec.num_bands, spec.num_frames, self.image_size);
        Ok(to_feature_tensor(&square, self.image_size, self.normalization, &w.source_clip_id))
    }

    /// Same tail as [`Self::from_waveform`] for an already computed
    /// `rows × cols` log-power image.
    pub fn from_image(&self, values: &[f32], rows: usize, cols: usize, clip_id: &str) -> FeatureTensor<f32> {
        let square = resize_to_square(values, rows, cols, self.image_size);
        to_feature_tensor(&square, self.image_size, self.normalization, clip_id)
    }

    pub fn features(&self, record: &ClipRecord, manifest: &Manifest) -> Result<FeatureTensor<f32>, FeatureError> {
        if let Some(cache) = &self.tensors {
            match cache.load(&record.clip_id, self.image_size) {
                Ok(Some(t)) => return Ok(t),
                Ok(None) => {}
                Err(FeatureError::CorruptCache { path, message }) => {
                    log::warn!("recomputing {}: {message}", path.display());
                }
                Err(e) => return Err(e),
            }
        }
        let w = match &self.waves {
            Some(c) => c.standardize(record, manifest)?,
            None => crate::dataset::standardize(record, manifest)?,
        };
        let t = self.from_waveform(&w)?;
        if let Some(cache) = &self.tensors {
            cache.store(&t)?;
        }
        Ok(t)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorSidecar {
    clip_id: String,
    shape: Vec<usize>,
    /// Only one plane is stored; it is replicated this many times on load.
    channels: usize,
    degenerate: bool,
}

/// `<root>/features/<pipeline-key>/<clip_id>.f32` + `.json`.
#[derive(Clone, Debug)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(root: &Path, key: String) -> Self {
        Self {
            dir: root.join("features").join(key),
        }
    }

    fn paths(&self, clip_id: &str) -> (PathBuf, PathBuf) {
        (
            self.dir.join(format!("{clip_id}.f32")),
            self.dir.join(format!("{clip_id}.json")),
        )
    }

    pub fn load(&self, clip_id: &str, side: usize) -> Result<Option<FeatureTensor<f32>>, FeatureError> {
        let (blob, side_path) = self.paths(clip_id);
        if !blob.exists() || !side_path.exists() {
            return Ok(None);
        }
        let corrupt = |message: String| FeatureError::CorruptCache {
            path: blob.clone(),
            message,
        };
        let meta: TensorSidecar = serde_json::from_slice(&std::fs::read(&side_path)?)
            .map_err(|e| corrupt(format!("sidecar: {e}")))?;
        if meta.shape != [side, side] || meta.channels != 3 || meta.clip_id != clip_id {
            return Err(corrupt(format!("unexpected shape {:?}", meta.shape)));
        }
        let plane = f32_from_le_bytes(&std::fs::read(&blob)?).ok_or_else(|| corrupt("ragged blob".into()))?;
        if plane.len() != side * side {
            return Err(corrupt(format!("{} values for a {side}x{side} plane", plane.len())));
        }
        let mut data = Vec::with_capacity(3 * plane.len());
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Ok(Some(FeatureTensor {
            values: Tensor::from_vec(&[3, side, side], data),
            clip_id: clip_id.to_string(),
            degenerate: meta.degenerate,
        }))
    }

    pub fn store(&self, t: &FeatureTensor<f32>) -> Result<(), FeatureError> {
        let (blob, side_path) = self.paths(&t.clip_id);
        let shape = t.values.shape();
        let meta = TensorSidecar {
            clip_id: t.clip_id.clone(),
            shape: shape[1..].to_vec(),
            channels: shape[0],
            degenerate: t.degenerate,
        };
        atomic_write(&blob, &f32_to_le_bytes(t.values.outer(0)))?;
        atomic_write(&side_path, &serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }
}
