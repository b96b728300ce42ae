use std::path::Path;

use echo_nn::layers::Mode;
use echo_nn::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::ClipRecord;
use crate::fsutil::atomic_write;
use crate::model::Model;
use crate::training::{batch_tensor, SampleSource};

/// Where embeddings are read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tap {
    /// Penultimate head activation (256-d).
    #[serde(rename = "HEAD_256")]
    Head256,
    /// Pooled backbone output.
    #[serde(rename = "BACKBONE")]
    Backbone,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    /// `[M × D]`.
    pub vectors: Tensor<f64>,
    pub labels: Vec<String>,
    pub tap: Tap,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape().get(1).copied().unwrap_or(0)
    }

    /// `label,v0,...,v{D-1}`.
    pub fn to_csv(&self) -> Result<Vec<u8>, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim()).map(|j| format!("v{j}")));
        w.write_record(&header)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            row.extend(self.vectors.outer(i).iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| EvalError::Io(e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        atomic_write(path, &self.to_csv()?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path, tap: Tap) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_path(path)?;
        let dim = r.headers()?.len().saturating_sub(1);
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != dim + 1 {
                return Err(EvalError::InvalidEmbeddings(format!("row {} has {} fields", row + 1, rec.len())));
            }
            labels.push(rec[0].to_string());
            for f in rec.iter().skip(1) {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| EvalError::InvalidEmbeddings(format!("row {}: `{f}` is not a number", row + 1)))?;
                data.push(v);
            }
        }
        let set = Self {
            vectors: Tensor::from_vec(&[labels.len(), dim], data),
            labels,
            tap,
        };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<(), EvalError> {
        if !self.vectors.all_finite() {
            return Err(EvalError::InvalidEmbeddings("non-finite value".into()));
        }
        Ok(())
    }
}

/// One vector per record from the requested tap, in inference mode.
pub fn export_embeddings<T: Scalar>(
    model: &mut Model<T>,
    records: &[ClipRecord],
    source: &dyn SampleSource,
    tap: Tap,
    batch_size: usize,
) -> Result<EmbeddingSet, EvalError> {
    let dim = match tap {
        Tap::Head256 => crate::model::HEAD_HIDDEN[1],
        Tap::Backbone => model.embedding_dim(),
    };
    let mut data = Vec::with_capacity(records.len() * dim);
    for chunk in records.chunks(batch_size.max(1)) {
        let refs: Vec<&ClipRecord> = chunk.iter().collect();
        let x = batch_tensor::<T>(source, &refs)?;
        let out = model.forward(&x, Mode::Eval);
        let t = match tap {
            Tap::Head256 => out.head_embedding,
            Tap::Backbone => out.backbone_embedding,
        };
        data.extend(t.data().iter().map(|v| v.as_f64()));
    }
    let set = EmbeddingSet {
        vectors: Tensor::from_vec(&[records.len(), dim], data),
        labels: records.iter().map(|r| r.fine_label.clone()).collect(),
        tap,
    };
    set.check()?;
    Ok(set)
}
