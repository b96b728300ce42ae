//! Minimal CPU layer library: tensors, convolution/normalization/dense
//! layers with explicit backward passes, and the Adam optimizer.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the two instantiations.

pub mod layers;
mod ops;
mod optim;
mod scalar;
mod tensor;

pub use layers::{Layer, Mode, Param, Sequential, SlotMut, SlotRef};
pub use ops::{argmax, softmax_rows};
pub use optim::Adam;
pub use scalar::{gemm, Scalar, Trans};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Sequential32 = Sequential<f32>;
pub type Sequential64 = Sequential<f64>;
