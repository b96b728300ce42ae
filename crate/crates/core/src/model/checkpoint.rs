use std::collections::HashMap;
use std::path::Path;

use echo_nn::{Scalar, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::{build_model, BackboneSpec, HeadSpec, Model, ModelError};
use crate::fsutil::atomic_write;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const META_KEY: &str = "echo";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Coarse,
    Fine,
    Baseline,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
            Stage::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub stage: Stage,
    pub backbone: BackboneSpec,
    pub num_classes: usize,
    #[serde(default)]
    pub ontology_hash: Option<String>,
    pub config_hash: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub dtype: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    pub expected_config_hash: Option<String>,
    pub expected_ontology_hash: Option<String>,
    /// Turn hash mismatches into errors instead of warnings.
    pub strict: bool,
}

fn dtype_of<T: Scalar>() -> Dtype {
    if T::BYTES == 8 {
        Dtype::F64
    } else {
        Dtype::F32
    }
}

/// Writes every backbone and head tensor plus JSON metadata. Coarse
/// checkpoints must record the ontology they were trained against.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta, path: &Path) -> Result<(), ModelError> {
    if meta.stage == Stage::Coarse && meta.ontology_hash.is_none() {
        return Err(ModelError::InvalidMeta("coarse checkpoint without ontology_hash".into()));
    }
    if meta.num_classes != model.num_classes() {
        return Err(ModelError::InvalidMeta(format!(
            "meta says {} classes, model has {}",
            meta.num_classes,
            model.num_classes()
        )));
    }
    let mut meta = meta.clone();
    meta.format_version = CHECKPOINT_FORMAT_VERSION;
    meta.dtype = T::DTYPE.to_string();
    let state = model.state_dict();
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = state
        .into_iter()
        .map(|(name, t)| {
            let mut bytes = Vec::with_capacity(t.len() * T::BYTES);
            for &v in t.data() {
                v.write_le(&mut bytes);
            }
            (name, t.shape().to_vec(), bytes)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(dtype_of::<T>(), shape.clone(), bytes)
                .map(|v| (name.as_str(), v))
                .map_err(|e| ModelError::InvalidMeta(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let info = Some(HashMap::from([(META_KEY.to_string(), serde_json::to_string(&meta)?)]));
    let bytes = safetensors::serialize(views, &info).map_err(|e| ModelError::InvalidMeta(e.to_string()))?;
    atomic_write(path, &bytes)?;
    Ok(())
}

/// Converts a stored F32/F64 tensor into `T`.
pub(crate) fn decode_tensor<T: Scalar>(view: &TensorView<'_>) -> Result<Tensor<T>, String> {
    let data: Vec<T> = match view.dtype() {
        Dtype::F32 => view
            .data()
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
        Dtype::F64 => view
            .data()
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
        other => return Err(format!("unsupported dtype {other:?}")),
    };
    Ok(Tensor::from_vec(view.shape(), data))
}

fn check_hash(field: &str, expected: &Option<String>, found: Option<&str>, strict: bool) -> Result<(), ModelError> {
    let Some(expected) = expected else {
        return Ok(());
    };
    if found == Some(expected.as_str()) {
        return Ok(());
    }
    let found = found.unwrap_or("<none>").to_string();
    if strict {
        return Err(ModelError::ConfigHashMismatch {
            field: field.to_string(),
            expected: expected.clone(),
            found,
        });
    }
    log::warn!("checkpoint {field} {found} differs from expected {expected}");
    Ok(())
}

/// Reads only the metadata block.
pub fn read_checkpoint_meta(bytes: &[u8]) -> Result<CheckpointMeta, ModelError> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| ModelError::CorruptCheckpoint(e.to_string()))?;
    let raw = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| ModelError::InvalidMeta(format!("no `{META_KEY}` metadata entry")))?;
    serde_json::from_str(raw).map_err(|e| ModelError::InvalidMeta(e.to_string()))
}

pub fn load_checkpoint<T: Scalar>(path: &Path, opts: &LoadOptions) -> Result<(Model<T>, CheckpointMeta), ModelError> {
    let bytes = std::fs::read(path)?;
    let meta = read_checkpoint_meta(&bytes)?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| ModelError::CorruptCheckpoint(e.to_string()))?;
    check_hash("config_hash", &opts.expected_config_hash, Some(&meta.config_hash), opts.strict)?;
    check_hash(
        "ontology_hash",
        &opts.expected_ontology_hash,
        meta.ontology_hash.as_deref(),
        opts.strict,
    )?;

    // Weights come from the file, never from a pretrained fetch.
    let mut spec = meta.backbone.clone();
    spec.pretrained = false;
    spec.weights = None;
    let mut model = build_model::<T>(&spec, &HeadSpec::new(meta.num_classes), 0)?;
    let mut state = HashMap::new();
    for (name, view) in st.tensors() {
        let t = decode_tensor::<T>(&view).map_err(ModelError::CorruptCheckpoint)?;
        state.insert(name, t);
    }
    model.load_state_dict(&state)?;
    model.spec = meta.backbone.clone();
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BackboneName;

    fn meta(stage: Stage, classes: usize) -> CheckpointMeta {
        CheckpointMeta {
            format_version: CHECKPOINT_FORMAT_VERSION,
            stage,
            backbone: BackboneSpec::new(BackboneName::TinyCnn),
            num_classes: classes,
            ontology_hash: Some("abc".into()),
            config_hash: "cfg".into(),
            best_epoch: 3,
            best_val_loss: 0.25,
            dtype: String::new(),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_model::<f32>(&BackboneSpec::new(BackboneName::TinyCnn), &HeadSpec::new(3), 5).unwrap();
        let a = dir.path().join("a.safetensors");
        let b = dir.path().join("b.safetensors");
        save_checkpoint(&m, &meta(Stage::Coarse, 3), &a).unwrap();
        let (back, read) = load_checkpoint::<f32>(&a, &LoadOptions::default()).unwrap();
        assert_eq!(read.best_epoch, 3);
        assert_eq!(read.dtype, "F32");
        assert_eq!(back.state_dict(), m.state_dict());
        save_checkpoint(&back, &read, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn coarse_needs_ontology_hash() {
        let m = build_model::<f32>(&BackboneSpec::new(BackboneName::TinyCnn), &HeadSpec::new(2), 0).unwrap();
        let mut md = meta(Stage::Coarse, 2);
        md.ontology_hash = None;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save_checkpoint(&m, &md, &dir.path().join("x")),
            Err(ModelError::InvalidMeta(_))
        ));
    }

    #[test]
    fn mismatch_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.safetensors");
        let m = build_model::<f32>(&BackboneSpec::new(BackboneName::TinyCnn), &HeadSpec::new(2), 0).unwrap();
        save_checkpoint(&m, &meta(Stage::Fine, 2), &path).unwrap();
        let opts = LoadOptions {
            expected_config_hash: Some("other".into()),
            strict: true,
            ..Default::default()
        };
        assert!(matches!(
            load_checkpoint::<f32>(&path, &opts),
            Err(ModelError::ConfigHashMismatch { .. })
        ));
        let lenient = LoadOptions { strict: false, ..opts };
        assert!(load_checkpoint::<f32>(&path, &lenient).is_ok());

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path, &LoadOptions::default()),
            Err(ModelError::CorruptCheckpoint(_))
        ));
    }
}
