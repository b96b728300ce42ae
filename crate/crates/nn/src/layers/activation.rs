use std::marker::PhantomData;

use crate::{Scalar, Tensor};

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    mask: Vec<bool>,
    _t: PhantomData<T>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self {
            mask: Vec::new(),
            _t: PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.mask = x.data().iter().map(|&v| v > T::zero()).collect();
        x.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        assert_eq!(grad.len(), self.mask.len(), "relu backward before forward");
        let data = grad
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor::from_vec(grad.shape(), data)
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// `x * sigmoid(x)`.
#[derive(Clone, Debug, Default)]
pub struct Silu<T> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Silu<T> {
    pub fn new() -> Self {
        Self { input: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input = Some(x.clone());
        x.map(|v| v * sigmoid(v))
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("silu backward before forward");
        let data = grad
            .data()
            .iter()
            .zip(x.data())
            .map(|(&g, &v)| {
                let s = sigmoid(v);
                g * s * (T::one() + v * (T::one() - s))
            })
            .collect();
        Tensor::from_vec(grad.shape(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{check, random_input};
    use crate::layers::{Layer, Mode};

    #[test]
    fn activations_match_finite_differences() {
        let x = random_input(&[2, 3, 4, 4], 3);
        assert!(check(&mut Layer::Relu(Relu::new()), &x, Mode::Train) < 1e-7);
        assert!(check(&mut Layer::Silu(Silu::new()), &x, Mode::Train) < 1e-7);
    }
}
