use echo_nn::{Scalar, Tensor};

use super::TrainError;
use crate::dataset::synthetic::{synthetic_image, SyntheticSpec};
use crate::dataset::{ClipRecord, Manifest};
use crate::features::{FeaturePipeline, FeatureTensor};

/// Supplies the `[3 × S × S]` network input for a record.
pub trait SampleSource: Sync {
    fn image_size(&self) -> usize;
    fn features(&self, record: &ClipRecord) -> Result<FeatureTensor<f32>, TrainError>;
}

/// Audio clips through the (optionally cached) feature pipeline.
pub struct PipelineSource<'a> {
    pub pipeline: &'a FeaturePipeline,
    pub manifest: &'a Manifest,
}

impl SampleSource for PipelineSource<'_> {
    fn image_size(&self) -> usize {
        self.pipeline.image_size()
    }

    fn features(&self, record: &ClipRecord) -> Result<FeatureTensor<f32>, TrainError> {
        Ok(self.pipeline.features(record, self.manifest)?)
    }
}

/// Generated images, resized and normalized by the pipeline tail.
pub struct SyntheticSource<'a> {
    pub spec: &'a SyntheticSpec,
    pub pipeline: &'a FeaturePipeline,
}

impl SampleSource for SyntheticSource<'_> {
    fn image_size(&self) -> usize {
        self.pipeline.image_size()
    }

    fn features(&self, record: &ClipRecord) -> Result<FeatureTensor<f32>, TrainError> {
        let s = self.spec.image_size;
        let img = synthetic_image(self.spec, &record.clip_id).ok_or_else(|| {
            TrainError::UnknownSample(record.clip_id.clone())
        })?;
        Ok(self.pipeline.from_image(&img, s, s, &record.clip_id))
    }
}

/// Stacks the inputs for `records` into `[B × 3 × S × S]`.
pub fn batch_tensor<T: Scalar>(source: &dyn SampleSource, records: &[&ClipRecord]) -> Result<Tensor<T>, TrainError> {
    let items = records
        .iter()
        .map(|r| source.features(r))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Tensor<f32>> = items.iter().map(|f| &f.values).collect();
    Ok(Tensor::stack(&refs).cast())
}
