use rand::Rng;

use super::{join, Param, SlotMut, SlotRef};
use crate::scalar::{gemm, Trans};
use crate::{Scalar, Tensor};

/// 2-D convolution with square kernels, lowered to GEMM through im2col.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    /// When false, `backward` skips the input gradient (first layer).
    pub input_grad: bool,
    input: Option<Tensor<T>>,
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.s == 1 && self.p == 0
    }
}

fn im2col<T: Scalar>(src: &[T], g: Geometry, cols: &mut [T]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.c {
        let chan = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((ci * g.k + ki) * g.k + kj) * plane;
                let row = &mut cols[row..row + plane];
                for oh in 0..g.ho {
                    let dst = &mut row[oh * g.wo..(oh + 1) * g.wo];
                    let ih = (oh * g.s + ki) as isize - g.p as isize;
                    if ih < 0 || ih >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let srow = &chan[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * g.s + kj) as isize - g.p as isize;
                        *d = if iw >= 0 && iw < g.w as isize {
                            srow[iw as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: Geometry, dst: &mut [T]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.c {
        let chan = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((ci * g.k + ki) * g.k + kj) * plane;
                let row = &cols[row..row + plane];
                for oh in 0..g.ho {
                    let ih = (oh * g.s + ki) as isize - g.p as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let drow = &mut chan[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, &v) in row[oh * g.wo..(oh + 1) * g.wo].iter().enumerate() {
                        let iw = (ow * g.s + kj) as isize - g.p as isize;
                        if iw >= 0 && iw < g.w as isize {
                            drow[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    /// Weights and bias are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(groups >= 1 && in_channels % groups == 0 && out_channels % groups == 0);
        assert!(kernel >= 1 && stride >= 1);
        let fan_in = (in_channels / groups) * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Param::uniform(
            &[out_channels, in_channels / groups, kernel, kernel],
            bound,
            rng,
        );
        let bias = bias.then(|| Param::uniform(&[out_channels], bound, rng));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            input_grad: true,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        let k = self.kernel;
        let (s, p) = (self.stride, self.padding);
        assert!(h + 2 * p >= k && w + 2 * p >= k, "conv input {h}x{w} smaller than kernel {k}");
        Geometry {
            c: self.in_channels / self.groups,
            h,
            w,
            k,
            s,
            p,
            ho: (h + 2 * p - k) / s + 1,
            wo: (w + 2 * p - k) / s + 1,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv expects {} channels, got {c}", self.in_channels);
        let g = self.geometry(h, w);
        let plane = g.ho * g.wo;
        let kdim = g.c * g.k * g.k;
        let cout_g = self.out_channels / self.groups;
        let mut out = Tensor::zeros(&[n, self.out_channels, g.ho, g.wo]);
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); kdim * plane]
        };
        let wdata = self.weight.value.data();
        for b in 0..n {
            let xs = x.outer(b);
            let ys = out.outer_mut(b);
            for grp in 0..self.groups {
                let src = &xs[grp * g.c * h * w..(grp + 1) * g.c * h * w];
                let lhs = &wdata[grp * cout_g * kdim..(grp + 1) * cout_g * kdim];
                let dst = &mut ys[grp * cout_g * plane..(grp + 1) * cout_g * plane];
                if g.is_pointwise() {
                    gemm(Trans::No, Trans::No, cout_g, plane, kdim, T::one(), lhs, src, T::zero(), dst);
                } else {
                    im2col(src, g, &mut cols);
                    gemm(Trans::No, Trans::No, cout_g, plane, kdim, T::one(), lhs, &cols, T::zero(), dst);
                }
            }
            if let Some(bias) = &self.bias {
                for (o, &bv) in bias.value.data().iter().enumerate() {
                    ys[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("conv backward before forward");
        let (n, _, h, w) = x.dims4();
        let g = self.geometry(h, w);
        let plane = g.ho * g.wo;
        let kdim = g.c * g.k * g.k;
        let cout_g = self.out_channels / self.groups;
        assert_eq!(grad.shape(), &[n, self.out_channels, g.ho, g.wo]);

        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { kdim * plane }];
        let mut dcols = vec![T::zero(); if self.input_grad { kdim * plane } else { 0 }];
        let wdata = self.weight.value.data().to_vec();
        for b in 0..n {
            let xs = x.outer(b);
            let gs = grad.outer(b);
            for grp in 0..self.groups {
                let src = &xs[grp * g.c * h * w..(grp + 1) * g.c * h * w];
                let gout = &gs[grp * cout_g * plane..(grp + 1) * cout_g * plane];
                let dw = &mut self.weight.grad.data_mut()[grp * cout_g * kdim..(grp + 1) * cout_g * kdim];
                let rhs: &[T] = if g.is_pointwise() {
                    src
                } else {
                    im2col(src, g, &mut cols);
                    &cols
                };
                gemm(Trans::No, Trans::Yes, cout_g, kdim, plane, T::one(), gout, rhs, T::one(), dw);
                if self.input_grad {
                    let lhs = &wdata[grp * cout_g * kdim..(grp + 1) * cout_g * kdim];
                    let dxs = &mut dx.outer_mut(b)[grp * g.c * h * w..(grp + 1) * g.c * h * w];
                    if g.is_pointwise() {
                        gemm(Trans::Yes, Trans::No, kdim, plane, cout_g, T::one(), lhs, gout, T::one(), dxs);
                    } else {
                        gemm(Trans::Yes, Trans::No, kdim, plane, cout_g, T::one(), lhs, gout, T::zero(), &mut dcols);
                        col2im(&dcols, g, dxs);
                    }
                }
            }
            if let Some(bias) = &mut self.bias {
                for (o, db) in bias.grad.data_mut().iter_mut().enumerate() {
                    *db += gs[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
                }
            }
        }
        dx
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, SlotMut<'_, T>)) {
        f(&join(prefix, "weight"), SlotMut::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), SlotMut::Param(b));
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'_, T>)) {
        f(&join(prefix, "weight"), SlotRef::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), SlotRef::Param(b));
        }
    }
}
