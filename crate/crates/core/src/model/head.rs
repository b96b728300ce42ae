use echo_nn::layers::{Linear, Relu};
use echo_nn::{Scalar, SlotMut, SlotRef, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

pub const HEAD_HIDDEN: [usize; 2] = [512, 256];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden_sizes: Vec<usize>,
    pub num_classes: usize,
}

impl HeadSpec {
    pub fn new(num_classes: usize) -> Self {
        Self {
            hidden_sizes: HEAD_HIDDEN.to_vec(),
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_sizes != HEAD_HIDDEN {
            return Err(ModelError::InvalidHead(format!(
                "hidden sizes must be {HEAD_HIDDEN:?}, got {:?}",
                self.hidden_sizes
            )));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidHead(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// `fc1 → ReLU → fc2 → ReLU → fc3`; softmax is applied by the model.
#[derive(Clone, Debug)]
pub struct Head<T> {
    fc1: Linear<T>,
    relu1: Relu<T>,
    fc2: Linear<T>,
    relu2: Relu<T>,
    fc3: Linear<T>,
}

impl<T: Scalar> Head<T> {
    pub fn new(inputs: usize, spec: &HeadSpec, rng: &mut impl Rng) -> Self {
        let [h1, h2] = HEAD_HIDDEN;
        Self {
            fc1: Linear::new(inputs, h1, rng),
            relu1: Relu::new(),
            fc2: Linear::new(h1, h2, rng),
            relu2: Relu::new(),
            fc3: Linear::new(h2, spec.num_classes, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.fc3.outputs()
    }

    /// Returns `(logits, penultimate activation)`.
    pub fn forward(&mut self, x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let h1 = self.relu1.forward(&self.fc1.forward(x));
        let h2 = self.relu2.forward(&self.fc2.forward(&h1));
        let logits = self.fc3.forward(&h2);
        (logits, h2)
    }

    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Tensor<T> {
        let g = self.fc3.backward(grad_logits);
        let g = self.fc2.backward(&self.relu2.backward(&g));
        self.fc1.backward(&self.relu1.backward(&g))
    }

    /// The output layer, exposed for gradient checks.
    pub fn output_layer(&self) -> &Linear<T> {
        &self.fc3
    }

    pub fn output_layer_mut(&mut self) -> &mut Linear<T> {
        &mut self.fc3
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_, T>)) {
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
        self.fc3.visit_mut(&format!("{prefix}.fc3"), f);
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'_, T>)) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
        self.fc3.visit(&format!("{prefix}.fc3"), f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut("head", &mut |_, slot| {
            if let SlotMut::Param(p) = slot {
                p.zero_grad();
            }
        });
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("head", &mut |_, slot| {
            if let SlotRef::Param(p) = slot {
                n += p.value.len();
            }
        });
        n
    }
}
