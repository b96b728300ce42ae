use crate::{Scalar, Tensor};

/// Row-wise softmax of a `[N, C]` matrix, shifted by the row maximum.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (n, c) = logits.dims2();
    let mut out = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let row = logits.outer(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let dst = out.outer_mut(i);
        let mut sum = T::zero();
        for (d, &z) in dst.iter_mut().zip(row) {
            *d = (z - max).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|d| *d /= sum);
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
