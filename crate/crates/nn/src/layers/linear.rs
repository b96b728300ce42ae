use rand::Rng;

use super::{join, Param, SlotMut, SlotRef};
use crate::scalar::{gemm, Trans};
use crate::{Scalar, Tensor};

/// Dense layer `y = x W^T + b` over `[N, in]` inputs.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Param::uniform(&[outputs, inputs], bound, rng);
        let bias = Param::uniform(&[outputs], bound, rng);
        Self {
            weight,
            bias,
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (n, d) = x.dims2();
        assert_eq!(d, self.inputs(), "linear expects {} features, got {d}", self.inputs());
        let o = self.outputs();
        let mut out = Tensor::zeros(&[n, o]);
        for b in 0..n {
            out.outer_mut(b).copy_from_slice(self.bias.value.data());
        }
        gemm(Trans::No, Trans::Yes, n, o, d, T::one(), x.data(), self.weight.value.data(), T::one(), out.data_mut());
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("linear backward before forward");
        let (n, d) = x.dims2();
        let o = self.outputs();
        assert_eq!(grad.shape(), &[n, o]);
        gemm(Trans::Yes, Trans::No, o, d, n, T::one(), grad.data(), x.data(), T::one(), self.weight.grad.data_mut());
        let db = self.bias.grad.data_mut();
        for b in 0..n {
            for (acc, &g) in db.iter_mut().zip(grad.outer(b)) {
                *acc += g;
            }
        }
        let mut dx = Tensor::zeros(&[n, d]);
        gemm(Trans::No, Trans::No, n, d, o, T::one(), grad.data(), self.weight.value.data(), T::zero(), dx.data_mut());
        dx
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_, T>)) {
        f(&join(prefix, "weight"), SlotMut::Param(&mut self.weight));
        f(&join(prefix, "bias"), SlotMut::Param(&mut self.bias));
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'_, T>)) {
        f(&join(prefix, "weight"), SlotRef::Param(&self.weight));
        f(&join(prefix, "bias"), SlotRef::Param(&self.bias));
    }
}
