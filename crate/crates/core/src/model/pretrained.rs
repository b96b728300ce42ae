use std::io::Read;

use echo_nn::{Scalar, Sequential, SlotMut};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::checkpoint::decode_tensor;
use super::ModelError;
use crate::fsutil::sha256_hex;

/// Location and expected SHA-256 of a safetensors file with
/// torchvision-named backbone weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainedRef {
    /// Local path, `file://` URI, or `http(s)://` URL.
    pub uri: String,
    pub sha256: String,
}

/// Fetches the file and checks its digest.
pub fn fetch_pretrained(r: &PretrainedRef) -> Result<Vec<u8>, ModelError> {
    let bytes = if r.uri.starts_with("http://") || r.uri.starts_with("https://") {
        let resp = ureq::get(&r.uri)
            .call()
            .map_err(|e| ModelError::PretrainedUnavailable(format!("{}: {e}", r.uri)))?;
        let mut buf = Vec::new();
        resp.into_reader()
            .read_to_end(&mut buf)
            .map_err(|e| ModelError::PretrainedUnavailable(format!("{}: {e}", r.uri)))?;
        buf
    } else {
        let path = r.uri.strip_prefix("file://").unwrap_or(&r.uri);
        std::fs::read(path).map_err(|e| ModelError::PretrainedUnavailable(format!("{path}: {e}")))?
    };
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(&r.sha256) {
        return Err(ModelError::PretrainedHashMismatch {
            expected: r.sha256.clone(),
            actual,
        });
    }
    Ok(bytes)
}

fn ignorable(name: &str) -> bool {
    name.starts_with("fc.") || name.starts_with("classifier.") || name.ends_with("num_batches_tracked")
}

/// Copies every backbone parameter and buffer from `bytes` by name. The
/// original classifier and batch counters are ignored; anything else that
/// does not line up is an error.
pub(crate) fn load_into<T: Scalar>(backbone: &mut Sequential<T>, bytes: &[u8]) -> Result<(), ModelError> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| ModelError::PretrainedMismatch(e.to_string()))?;
    let mut problems = Vec::new();
    let mut used = 0usize;
    backbone.visit_mut("", &mut |name, slot| {
        let dst = match slot {
            SlotMut::Param(p) => &mut p.value,
            SlotMut::Buffer(b) => b,
        };
        match st.tensor(name) {
            Ok(view) if view.shape() == dst.shape() => match decode_tensor::<T>(&view) {
                Ok(t) => {
                    dst.data_mut().copy_from_slice(t.data());
                    used += 1;
                }
                Err(e) => problems.push(format!("{name}: {e}")),
            },
            Ok(view) => problems.push(format!("{name}: shape {:?} vs {:?}", view.shape(), dst.shape())),
            Err(_) => problems.push(format!("{name}: missing")),
        }
    });
    let extra = st.names().into_iter().filter(|n| !ignorable(n)).count().saturating_sub(used);
    if extra > 0 {
        problems.push(format!("{extra} unexpected tensors"));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        problems.truncate(8);
        Err(ModelError::PretrainedMismatch(problems.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, BackboneName, BackboneSpec, HeadSpec};

    fn write_backbone(path: &std::path::Path, seed: u64) -> String {
        // Exports a randomly initialized backbone under torchvision names.
        let m = build_model::<f32>(&BackboneSpec::new(BackboneName::TinyCnn), &HeadSpec::new(2), seed).unwrap();
        let state = m.state_dict();
        let bufs: Vec<(String, Vec<usize>, Vec<u8>)> = state
            .iter()
            .filter_map(|(k, t)| {
                let name = k.strip_prefix("backbone.")?;
                let bytes = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                Some((name.to_string(), t.shape().to_vec(), bytes))
            })
            .chain(std::iter::once(("fc.weight".to_string(), vec![2], vec![0u8; 8])))
            .collect();
        let views: Vec<_> = bufs
            .iter()
            .map(|(n, s, b)| {
                (n.as_str(), safetensors::tensor::TensorView::new(safetensors::Dtype::F32, s.clone(), b).unwrap())
            })
            .collect();
        let bytes = safetensors::serialize(views, &None).unwrap();
        std::fs::write(path, &bytes).unwrap();
        sha256_hex(&bytes)
    }

    #[test]
    fn loads_by_name_and_checks_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let sha = write_backbone(&path, 7);
        let mut spec = BackboneSpec::new(BackboneName::TinyCnn);
        spec.pretrained = true;
        spec.weights = Some(PretrainedRef {
            uri: format!("file://{}", path.display()),
            sha256: sha,
        });
        let a = build_model::<f32>(&spec, &HeadSpec::new(2), 1).unwrap();
        let b = build_model::<f32>(&BackboneSpec::new(BackboneName::TinyCnn), &HeadSpec::new(2), 7).unwrap();
        assert_eq!(a.backbone_digest(), b.backbone_digest());

        spec.weights.as_mut().unwrap().sha256 = "00".repeat(32);
        assert!(matches!(
            build_model::<f32>(&spec, &HeadSpec::new(2), 1),
            Err(ModelError::PretrainedHashMismatch { .. })
        ));
        spec.weights.as_mut().unwrap().uri = dir.path().join("nope").display().to_string();
        assert!(matches!(
            build_model::<f32>(&spec, &HeadSpec::new(2), 1),
            Err(ModelError::PretrainedUnavailable(_))
        ));
    }
}
