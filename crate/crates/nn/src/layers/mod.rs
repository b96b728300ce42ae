//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`, so a
//! `backward` call must follow the matching `forward` on the same batch.
//! Parameter names follow the torchvision module paths so that converted
//! pretrained weights load by name.

mod activation;
mod block;
mod conv;
mod linear;
mod norm;
mod pool;

pub use activation::{Relu, Silu};
pub use block::{Residual, SqueezeExcite};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use pool::{GlobalAvgPool, MaxPool2d};

use rand::Rng;

use crate::{Scalar, Tensor};

/// Training mode uses batch statistics and caches activations; eval mode
/// uses running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    /// Uniform in `[-bound, bound)`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Self::new(Tensor::from_vec(shape, data))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Mutable view of one named state entry.
pub enum SlotMut<'a, T> {
    Param(&'a mut Param<T>),
    /// Non-trainable state such as batch-norm running statistics.
    Buffer(&'a mut Tensor<T>),
}

pub enum SlotRef<'a, T> {
    Param(&'a Param<T>),
    Buffer(&'a Tensor<T>),
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else if name.is_empty() {
        prefix.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Linear(Linear<T>),
    Relu(Relu<T>),
    Silu(Silu<T>),
    MaxPool(MaxPool2d),
    GlobalAvgPool(GlobalAvgPool),
    SqueezeExcite(Box<SqueezeExcite<T>>),
    Residual(Box<Residual<T>>),
    Seq(Sequential<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Linear(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::Silu(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x),
            Layer::GlobalAvgPool(l) => l.forward(x),
            Layer::SqueezeExcite(l) => l.forward(x, mode),
            Layer::Residual(l) => l.forward(x, mode),
            Layer::Seq(l) => l.forward(x, mode),
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Linear(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::Silu(l) => l.backward(grad),
            Layer::MaxPool(l) => l.backward(grad),
            Layer::GlobalAvgPool(l) => l.backward(grad),
            Layer::SqueezeExcite(l) => l.backward(grad),
            Layer::Residual(l) => l.backward(grad),
            Layer::Seq(l) => l.backward(grad),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_, T>)) {
        match self {
            Layer::Conv(l) => l.visit_mut(prefix, f),
            Layer::BatchNorm(l) => l.visit_mut(prefix, f),
            Layer::Linear(l) => l.visit_mut(prefix, f),
            Layer::SqueezeExcite(l) => l.visit_mut(prefix, f),
            Layer::Residual(l) => l.visit_mut(prefix, f),
            Layer::Seq(l) => l.visit_mut(prefix, f),
            Layer::Relu(_) | Layer::Silu(_) | Layer::MaxPool(_) | Layer::GlobalAvgPool(_) => {}
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'_, T>)) {
        match self {
            Layer::Conv(l) => l.visit(prefix, f),
            Layer::BatchNorm(l) => l.visit(prefix, f),
            Layer::Linear(l) => l.visit(prefix, f),
            Layer::SqueezeExcite(l) => l.visit(prefix, f),
            Layer::Residual(l) => l.visit(prefix, f),
            Layer::Seq(l) => l.visit(prefix, f),
            Layer::Relu(_) | Layer::Silu(_) | Layer::MaxPool(_) | Layer::GlobalAvgPool(_) => {}
        }
    }
}

macro_rules! impl_from_layer {
    ($($variant:ident($ty:ty)),* $(,)?) => {
        $(impl<T> From<$ty> for Layer<T> {
            fn from(l: $ty) -> Self {
                Layer::$variant(l)
            }
        })*
    };
}

impl_from_layer!(
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Linear(Linear<T>),
    Relu(Relu<T>),
    Silu(Silu<T>),
    MaxPool(MaxPool2d),
    GlobalAvgPool(GlobalAvgPool),
    Seq(Sequential<T>),
);

impl<T> From<SqueezeExcite<T>> for Layer<T> {
    fn from(l: SqueezeExcite<T>) -> Self {
        Layer::SqueezeExcite(Box::new(l))
    }
}

impl<T> From<Residual<T>> for Layer<T> {
    fn from(l: Residual<T>) -> Self {
        Layer::Residual(Box::new(l))
    }
}

/// Named children applied in order.
#[derive(Clone, Debug)]
pub struct Sequential<T> {
    children: Vec<(String, Layer<T>)>,
}

impl<T> Default for Sequential<T> {
    fn default() -> Self {
        Self {
            children: Vec::new(),
        }
    }
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Into<Layer<T>>) {
        self.children.push((name.into(), layer.into()));
    }

    /// Builder form of [`push`](Self::push).
    pub fn with(mut self, name: impl Into<String>, layer: impl Into<Layer<T>>) -> Self {
        self.push(name, layer);
        self
    }

    /// Appends a child named by its position.
    pub fn push_indexed(&mut self, layer: impl Into<Layer<T>>) {
        let name = self.children.len().to_string();
        self.push(name, layer);
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn children(&self) -> &[(String, Layer<T>)] {
        &self.children
    }

    pub fn children_mut(&mut self) -> &mut [(String, Layer<T>)] {
        &mut self.children
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let mut iter = self.children.iter_mut();
        let Some((_, first)) = iter.next() else {
            return x.clone();
        };
        let mut h = first.forward(x, mode);
        for (_, layer) in iter {
            h = layer.forward(&h, mode);
        }
        h
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut iter = self.children.iter_mut().rev();
        let Some((_, last)) = iter.next() else {
            return grad.clone();
        };
        let mut g = last.backward(grad);
        for (_, layer) in iter {
            g = layer.backward(&g);
        }
        g
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_, T>)) {
        for (name, layer) in &mut self.children {
            layer.visit_mut(&join(prefix, name), f);
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'_, T>)) {
        for (name, layer) in &self.children {
            layer.visit(&join(prefix, name), f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, slot| {
            if let SlotMut::Param(p) = slot {
                p.zero_grad();
            }
        });
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, slot| {
            if let SlotRef::Param(p) = slot {
                n += p.value.len();
            }
        });
        n
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sequential_names_nest() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inner = Sequential::new()
            .with("0", Conv2d::<f32>::new(3, 4, 3, 1, 1, 1, false, &mut rng))
            .with("1", BatchNorm2d::new(4, 1e-5));
        let seq = Sequential::new().with("stem", inner).with("act", Relu::new());
        let mut names = Vec::new();
        seq.visit("backbone", &mut |n, _| names.push(n.to_string()));
        assert_eq!(
            names,
            [
                "backbone.stem.0.weight",
                "backbone.stem.1.weight",
                "backbone.stem.1.bias",
                "backbone.stem.1.running_mean",
                "backbone.stem.1.running_var",
            ]
        );
        assert_eq!(seq.param_count(), 4 * 3 * 9 + 8);
    }
}
