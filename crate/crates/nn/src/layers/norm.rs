use super::{join, Mode, Param, SlotMut, SlotRef};
use crate::{Scalar, Tensor};

/// Per-channel batch normalization over `(N, H, W)`.
///
/// Running statistics follow the PyTorch convention: momentum 0.1 and the
/// unbiased batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    eps: T,
    momentum: T,
    cache: Option<Cache<T>>,
}

#[derive(Clone, Debug)]
struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize, eps: f64) -> Self {
        Self {
            weight: Param::new(Tensor::full(&[channels], T::one())),
            bias: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: T::lit(eps),
            momentum: T::lit(0.1),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.weight.value.len(), "batch norm channel mismatch");
        let plane = h * w;
        let count = n * plane;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        match mode {
            Mode::Train => {
                let cnt = T::lit(count as f64);
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += x.outer(b)[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
                    }
                    let m = s / cnt;
                    let mut v = T::zero();
                    for b in 0..n {
                        for &e in &x.outer(b)[ch * plane..(ch + 1) * plane] {
                            v += (e - m) * (e - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = v / cnt;
                }
                let mom = self.momentum;
                let unbias = if count > 1 {
                    cnt / T::lit((count - 1) as f64)
                } else {
                    T::one()
                };
                for ch in 0..c {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (T::one() - mom) * *rm + mom * mean[ch];
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (T::one() - mom) * *rv + mom * var[ch] * unbias;
                }
            }
            Mode::Eval => {
                mean.copy_from_slice(self.running_mean.data());
                var.copy_from_slice(self.running_var.data());
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let gamma = self.weight.value.data();
        let beta = self.bias.value.data();
        for b in 0..n {
            let xs = x.outer(b);
            let hs = xhat.outer_mut(b);
            for ch in 0..c {
                for i in ch * plane..(ch + 1) * plane {
                    hs[i] = (xs[i] - mean[ch]) * inv_std[ch];
                }
            }
            let ys = out.outer_mut(b);
            let hs = xhat.outer(b);
            for ch in 0..c {
                for i in ch * plane..(ch + 1) * plane {
                    ys[i] = gamma[ch] * hs[i] + beta[ch];
                }
            }
        }
        self.cache = Some(Cache { xhat, inv_std, mode });
        out
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("batch norm backward before forward");
        let (n, c, h, w) = grad.dims4();
        let plane = h * w;
        let cnt = T::lit((n * plane) as f64);
        let gamma = self.weight.value.data().to_vec();
        let mut dx = Tensor::zeros(grad.shape());
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for b in 0..n {
                let gs = &grad.outer(b)[ch * plane..(ch + 1) * plane];
                let hs = &cache.xhat.outer(b)[ch * plane..(ch + 1) * plane];
                for (&g, &xh) in gs.iter().zip(hs) {
                    sum_g += g;
                    sum_gx += g * xh;
                }
            }
            self.weight.grad.data_mut()[ch] += sum_gx;
            self.bias.grad.data_mut()[ch] += sum_g;
            let scale = gamma[ch] * cache.inv_std[ch];
            for b in 0..n {
                let gs = &grad.outer(b)[ch * plane..(ch + 1) * plane];
                let hs = &cache.xhat.outer(b)[ch * plane..(ch + 1) * plane];
                let ds = &mut dx.outer_mut(b)[ch * plane..(ch + 1) * plane];
                match cache.mode {
                    Mode::Train => {
                        let mg = sum_g / cnt;
                        let mgx = sum_gx / cnt;
                        for i in 0..plane {
                            ds[i] = scale * (gs[i] - mg - hs[i] * mgx);
                        }
                    }
                    Mode::Eval => {
                        for i in 0..plane {
                            ds[i] = scale * gs[i];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_, T>)) {
        f(&join(prefix, "weight"), SlotMut::Param(&mut self.weight));
        f(&join(prefix, "bias"), SlotMut::Param(&mut self.bias));
        f(&join(prefix, "running_mean"), SlotMut::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), SlotMut::Buffer(&mut self.running_var));
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'_, T>)) {
        f(&join(prefix, "weight"), SlotRef::Param(&self.weight));
        f(&join(prefix, "bias"), SlotRef::Param(&self.bias));
        f(&join(prefix, "running_mean"), SlotRef::Buffer(&self.running_mean));
        f(&join(prefix, "running_var"), SlotRef::Buffer(&self.running_var));
    }
}
