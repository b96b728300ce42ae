use crate::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(padding * 2 <= kernel, "padding exceeds half the kernel");
        Self {
            kernel,
            stride,
            padding,
            argmax: Vec::new(),
            input_shape: Vec::new(),
        }
    }

    /// Ties resolve to the first maximal element in row-major window order.
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        assert!(h + 2 * p >= k && w + 2 * p >= k, "pool input {h}x{w} smaller than kernel {k}");
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        self.argmax = vec![0; n * c * ho * wo];
        let xd = x.data();
        let od = out.data_mut();
        for nc in 0..n * c {
            let base = nc * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for ki in 0..k {
                        let ih = (oh * s + ki) as isize - p as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let iw = (ow * s + kj) as isize - p as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let idx = base + ih as usize * w + iw as usize;
                            if best_idx == usize::MAX || xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (nc * ho + oh) * wo + ow;
                    od[o] = best;
                    self.argmax[o] = best_idx;
                }
            }
        }
        self.input_shape = x.shape().to_vec();
        out
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        assert_eq!(grad.len(), self.argmax.len(), "max pool backward before forward");
        let mut dx = Tensor::zeros(&self.input_shape);
        let d = dx.data_mut();
        for (&g, &idx) in grad.data().iter().zip(&self.argmax) {
            d[idx] += g;
        }
        dx
    }
}

/// Mean over the spatial axes; `[N, C]` output, or `[N, C, 1, 1]` with
/// `keep_dims`.
#[derive(Clone, Debug)]
pub struct GlobalAvgPool {
    keep_dims: bool,
    input_shape: Vec<usize>,
}

impl GlobalAvgPool {
    pub fn new(keep_dims: bool) -> Self {
        Self {
            keep_dims,
            input_shape: Vec::new(),
        }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let inv = T::one() / T::lit(plane as f64);
        let data: Vec<T> = x
            .data()
            .chunks_exact(plane)
            .map(|chunk| chunk.iter().copied().sum::<T>() * inv)
            .collect();
        self.input_shape = x.shape().to_vec();
        if self.keep_dims {
            Tensor::from_vec(&[n, c, 1, 1], data)
        } else {
            Tensor::from_vec(&[n, c], data)
        }
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        assert!(!self.input_shape.is_empty(), "avg pool backward before forward");
        let plane = self.input_shape[2] * self.input_shape[3];
        let inv = T::one() / T::lit(plane as f64);
        let mut dx = Tensor::zeros(&self.input_shape);
        for (chunk, &g) in dx.data_mut().chunks_exact_mut(plane).zip(grad.data()) {
            chunk.fill(g * inv);
        }
        dx
    }
}
