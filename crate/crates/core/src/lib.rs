//! Coarse-to-fine training for environmental sound classification: an
//! ontology groups the fine labels into parent classes, the network is
//! first trained on the parents, then the head is swapped and the same
//! backbone is fine-tuned on the original labels.

pub mod dataset;
pub mod evaluation;
pub mod experiment;
pub mod features;
mod fsutil;
pub mod model;
pub mod ontology;
pub mod training;

pub use echo_nn::{Scalar, Tensor};
pub use model::{Model32, Model64};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
