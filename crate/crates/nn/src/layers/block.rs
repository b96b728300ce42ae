use rand::Rng;

use super::activation::sigmoid;
use super::{join, Conv2d, GlobalAvgPool, Mode, Relu, Sequential, Silu, SlotMut, SlotRef};
use crate::{Scalar, Tensor};

/// Channel gating: `x * sigmoid(fc2(silu(fc1(avgpool(x)))))`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite<T> {
    pool: GlobalAvgPool,
    fc1: Conv2d<T>,
    act: Silu<T>,
    fc2: Conv2d<T>,
    input: Option<Tensor<T>>,
    gate: Option<Tensor<T>>,
}

impl<T: Scalar> SqueezeExcite<T> {
    pub fn new(channels: usize, squeezed: usize, rng: &mut impl Rng) -> Self {
        Self {
            pool: GlobalAvgPool::new(true),
            fc1: Conv2d::new(channels, squeezed, 1, 1, 0, 1, true, rng),
            act: Silu::new(),
            fc2: Conv2d::new(squeezed, channels, 1, 1, 0, 1, true, rng),
            input: None,
            gate: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let pooled = self.pool.forward(x);
        let z = self.fc2.forward(&self.act.forward(&self.fc1.forward(&pooled)));
        let gate = z.map(sigmoid);
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let mut out = x.clone();
        for nc in 0..n * c {
            let s = gate.data()[nc];
            out.data_mut()[nc * plane..(nc + 1) * plane].iter_mut().for_each(|v| *v *= s);
        }
        self.input = Some(x.clone());
        self.gate = Some(gate);
        out
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("squeeze-excite backward before forward");
        let gate = self.gate.as_ref().expect("squeeze-excite backward before forward");
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let mut dx = grad.clone();
        let mut dz = Tensor::zeros(&[n, c, 1, 1]);
        for nc in 0..n * c {
            let s = gate.data()[nc];
            let gs = &grad.data()[nc * plane..(nc + 1) * plane];
            let xs = &x.data()[nc * plane..(nc + 1) * plane];
            let ds: T = gs.iter().zip(xs).map(|(&g, &v)| g * v).sum();
            dz.data_mut()[nc] = ds * s * (T::one() - s);
            dx.data_mut()[nc * plane..(nc + 1) * plane].iter_mut().for_each(|v| *v *= s);
        }
        let dpooled = self.fc1.backward(&self.act.backward(&self.fc2.backward(&dz)));
        dx.add_assign(&self.pool.backward(&dpooled));
        dx
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_, T>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'_, T>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
}

/// `act(body(x) + shortcut(x))`, with an identity shortcut when none is
/// given. Body parameters are named directly under the block prefix and
/// shortcut parameters under `downsample`.
#[derive(Clone, Debug)]
pub struct Residual<T> {
    body: Sequential<T>,
    shortcut: Option<Sequential<T>>,
    post_relu: Option<Relu<T>>,
}

impl<T: Scalar> Residual<T> {
    pub fn new(body: Sequential<T>, shortcut: Option<Sequential<T>>, post_relu: bool) -> Self {
        Self {
            body,
            shortcut,
            post_relu: post_relu.then(Relu::new),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let mut y = self.body.forward(x, mode);
        match &mut self.shortcut {
            Some(s) => y.add_assign(&s.forward(x, mode)),
            None => y.add_assign(x),
        }
        match &mut self.post_relu {
            Some(r) => r.forward(&y),
            None => y,
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let g = match &mut self.post_relu {
            Some(r) => r.backward(grad),
            None => grad.clone(),
        };
        let mut dx = self.body.backward(&g);
        match &mut self.shortcut {
            Some(s) => dx.add_assign(&s.backward(&g)),
            None => dx.add_assign(&g),
        }
        dx
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_, T>)) {
        self.body.visit_mut(prefix, f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&join(prefix, "downsample"), f);
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'_, T>)) {
        self.body.visit(prefix, f);
        if let Some(s) = &self.shortcut {
            s.visit(&join(prefix, "downsample"), f);
        }
    }
}
