//! Backbone + fixed classifier head, head swapping, and checkpoints.

mod backbone;
mod checkpoint;
mod head;
mod pretrained;

pub use checkpoint::{load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta, LoadOptions, Stage, CHECKPOINT_FORMAT_VERSION};
pub use head::{Head, HeadSpec, HEAD_HIDDEN};
pub use pretrained::{fetch_pretrained, PretrainedRef};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use echo_nn::{softmax_rows, Mode, Param, Scalar, Sequential, SlotMut, SlotRef, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::sha256_hex;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown backbone `{0}`")]
    UnknownBackbone(String),
    #[error("{name} produces {expected}-d embeddings, spec says {got}")]
    EmbeddingDimMismatch { name: BackboneName, expected: usize, got: usize },
    #[error("invalid head: {0}")]
    InvalidHead(String),
    #[error("pretrained weights unavailable: {0}")]
    PretrainedUnavailable(String),
    #[error("pretrained weights hash {actual} does not match {expected}")]
    PretrainedHashMismatch { expected: String, actual: String },
    #[error("pretrained weights do not fit the backbone: {0}")]
    PretrainedMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint {field} {found} does not match expected {expected}")]
    ConfigHashMismatch { field: String, expected: String, found: String },
    #[error("invalid checkpoint metadata: {0}")]
    InvalidMeta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackboneName {
    #[serde(rename = "RESNET18")]
    Resnet18,
    #[serde(rename = "RESNET50")]
    Resnet50,
    #[serde(rename = "EFFICIENTNET_B0")]
    EfficientnetB0,
    #[serde(rename = "EFFICIENTNET_B1")]
    EfficientnetB1,
    #[serde(rename = "TINY_CNN")]
    TinyCnn,
}

impl BackboneName {
    pub const ALL: [BackboneName; 5] = [
        BackboneName::Resnet18,
        BackboneName::Resnet50,
        BackboneName::EfficientnetB0,
        BackboneName::EfficientnetB1,
        BackboneName::TinyCnn,
    ];

    /// Width of the pooled feature vector.
    pub fn embedding_dim(self) -> usize {
        match self {
            BackboneName::Resnet18 => 512,
            BackboneName::Resnet50 => 2048,
            BackboneName::EfficientnetB0 | BackboneName::EfficientnetB1 => 1280,
            BackboneName::TinyCnn => 64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::Resnet18 => "RESNET18",
            BackboneName::Resnet50 => "RESNET50",
            BackboneName::EfficientnetB0 => "EFFICIENTNET_B0",
            BackboneName::EfficientnetB1 => "EFFICIENTNET_B1",
            BackboneName::TinyCnn => "TINY_CNN",
        }
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneName {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        Self::ALL
            .into_iter()
            .find(|b| b.as_str().replace('_', "") == norm)
            .ok_or_else(|| ModelError::UnknownBackbone(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub name: BackboneName,
    #[serde(default)]
    pub pretrained: bool,
    pub embedding_dim: usize,
    /// Where to fetch pretrained weights; required when `pretrained`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PretrainedRef>,
}

impl BackboneSpec {
    /// Randomly initialized backbone with its native embedding width.
    pub fn new(name: BackboneName) -> Self {
        Self {
            name,
            pretrained: false,
            embedding_dim: name.embedding_dim(),
            weights: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embedding_dim != self.name.embedding_dim() {
            return Err(ModelError::EmbeddingDimMismatch {
                name: self.name,
                expected: self.name.embedding_dim(),
                got: self.embedding_dim,
            });
        }
        if self.pretrained && self.weights.is_none() {
            return Err(ModelError::PretrainedUnavailable(format!(
                "{} is marked pretrained but no weights URI is configured",
                self.name
            )));
        }
        Ok(())
    }
}

/// 64 bits of `sha256(seed || tag)`: independent streams per purpose.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(tag.as_bytes());
    let h = sha256_hex(&bytes);
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

/// Result of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// `[N × num_classes]`, rows sum to one.
    pub probs: Tensor<T>,
    /// Penultimate head activation, `[N × 256]`.
    pub head_embedding: Tensor<T>,
    /// Pooled backbone features, `[N × embedding_dim]`.
    pub backbone_embedding: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: BackboneSpec,
    backbone: Sequential<T>,
    head: Head<T>,
}

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;

/// Builds backbone and head. The backbone is seeded from `(seed,
/// "backbone")` or loaded from pretrained weights; the head from `(seed,
/// "head")`.
pub fn build_model<T: Scalar>(b: &BackboneSpec, h: &HeadSpec, seed: u64) -> Result<Model<T>, ModelError> {
    b.validate()?;
    h.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "backbone"));
    let mut backbone = backbone::build::<T>(b.name, &mut rng);
    if b.pretrained {
        let weights = b.weights.as_ref().expect("validated");
        pretrained::load_into(&mut backbone, &fetch_pretrained(weights)?)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "head"));
    let head = Head::new(b.embedding_dim, h, &mut rng);
    Ok(Model {
        spec: b.clone(),
        backbone,
        head,
    })
}

/// Keeps the backbone bit-for-bit and draws a fresh head for
/// `new_num_classes` from `(seed, "swap-head")`.
pub fn swap_head<T: Scalar>(m: &Model<T>, new_num_classes: usize, seed: u64) -> Result<Model<T>, ModelError> {
    let spec = HeadSpec::new(new_num_classes);
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "swap-head"));
    Ok(Model {
        spec: m.spec.clone(),
        backbone: m.backbone.clone(),
        head: Head::new(m.spec.embedding_dim, &spec, &mut rng),
    })
}

impl<T: Scalar> Model<T> {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim
    }

    pub fn head(&self) -> &Head<T> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Head<T> {
        &mut self.head
    }

    pub fn backbone(&self) -> &Sequential<T> {
        &self.backbone
    }

    /// `x` is `[N × 3 × H × W]`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> ForwardOutput<T> {
        let backbone_embedding = self.backbone.forward(x, mode);
        let (logits, head_embedding) = self.head.forward(&backbone_embedding);
        ForwardOutput {
            probs: softmax_rows(&logits),
            head_embedding,
            backbone_embedding,
        }
    }

    /// Backpropagates `d loss / d logits` from the last `forward`,
    /// accumulating parameter gradients.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) {
        let g = self.head.backward(grad_logits);
        self.backbone.backward(&g);
    }

    pub fn zero_grad(&mut self) {
        self.backbone.zero_grad();
        self.head.zero_grad();
    }

    /// Trainable parameters in a fixed order (backbone first).
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let mut wrap = |name: &str, slot: SlotMut<'_, T>| {
            if let SlotMut::Param(p) = slot {
                f(name, p);
            }
        };
        self.backbone.visit_mut("backbone", &mut wrap);
        self.head.visit_mut("head", &mut wrap);
    }

    /// Every parameter and buffer under `backbone.*` / `head.*`.
    pub fn state_dict(&self) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        let mut collect = |name: &str, slot: SlotRef<'_, T>| {
            let t = match slot {
                SlotRef::Param(p) => p.value.clone(),
                SlotRef::Buffer(b) => b.clone(),
            };
            out.insert(name.to_string(), t);
        };
        self.backbone.visit("backbone", &mut collect);
        self.head.visit("head", &mut collect);
        out
    }

    /// Overwrites every entry; names and shapes must match exactly.
    pub fn load_state_dict(&mut self, state: &HashMap<String, Tensor<T>>) -> Result<(), ModelError> {
        let mut missing = Vec::new();
        let mut seen = 0usize;
        let mut assign = |name: &str, slot: SlotMut<'_, T>| {
            let dst = match slot {
                SlotMut::Param(p) => &mut p.value,
                SlotMut::Buffer(b) => b,
            };
            match state.get(name) {
                Some(src) if src.shape() == dst.shape() => {
                    dst.data_mut().copy_from_slice(src.data());
                    seen += 1;
                }
                Some(src) => missing.push(format!("{name}: shape {:?} vs {:?}", src.shape(), dst.shape())),
                None => missing.push(format!("{name}: missing")),
            }
        };
        self.backbone.visit_mut("backbone", &mut assign);
        self.head.visit_mut("head", &mut assign);
        if !missing.is_empty() {
            return Err(ModelError::CorruptCheckpoint(missing.join(", ")));
        }
        if seen != state.len() {
            return Err(ModelError::CorruptCheckpoint(format!(
                "{} unexpected tensors",
                state.len() - seen
            )));
        }
        Ok(())
    }

    /// SHA-256 over backbone names and little-endian values.
    pub fn backbone_digest(&self) -> String {
        let mut bytes = Vec::new();
        self.backbone.visit("backbone", &mut |name, slot| {
            let t = match slot {
                SlotRef::Param(p) => &p.value,
                SlotRef::Buffer(b) => b,
            };
            bytes.extend_from_slice(name.as_bytes());
            for &v in t.data() {
                v.write_le(&mut bytes);
            }
        });
        sha256_hex(&bytes)
    }

    pub fn backbone_param_count(&self) -> usize {
        self.backbone.param_count()
    }

    pub fn head_param_count(&self) -> usize {
        self.head.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_leniently() {
        assert_eq!("tiny_cnn".parse::<BackboneName>().unwrap(), BackboneName::TinyCnn);
        assert_eq!("EfficientNet-B1".parse::<BackboneName>().unwrap(), BackboneName::EfficientnetB1);
        assert!(matches!("vgg16".parse::<BackboneName>(), Err(ModelError::UnknownBackbone(_))));
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let mut spec = BackboneSpec::new(BackboneName::TinyCnn);
        spec.embedding_dim = 128;
        assert!(matches!(
            build_model::<f32>(&spec, &HeadSpec::new(2), 0),
            Err(ModelError::EmbeddingDimMismatch { expected: 64, got: 128, .. })
        ));
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        assert_ne!(derive_seed(1, "head"), derive_seed(1, "swap-head"));
        assert_eq!(derive_seed(1, "head"), derive_seed(1, "head"));
    }
}
