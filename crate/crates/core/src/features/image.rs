use echo_nn::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Per-sample intensity normalization applied before channel replication.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Normalization {
    /// Affine map onto `[0, 1]`.
    #[default]
    Minmax,
    /// Zero mean, unit (population) variance.
    Zscore,
}

/// `[3 × side × side]` network input with identical channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor<T> {
    pub values: Tensor<T>,
    pub clip_id: String,
    /// Set when the input was constant and the output is defined as zeros.
    pub degenerate: bool,
}

fn lerp<T: Scalar>(a: T, b: T, f: T) -> T {
    let v = a + (b - a) * f;
    // Rounding may step a hair outside [a, b]; keep the bound exact.
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    v.max(lo).min(hi)
}

/// Corner-aligned bilinear resize of a row-major `rows × cols` matrix:
/// output `(i, j)` samples input position
/// `(i * (rows-1)/(out_rows-1), j * (cols-1)/(out_cols-1))`.
pub fn resize_bilinear<T: Scalar>(src: &[T], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Vec<T> {
    assert_eq!(src.len(), rows * cols, "matrix size");
    assert!(rows > 0 && cols > 0 && out_rows > 0 && out_cols > 0, "empty matrix");
    let coords = |n_in: usize, n_out: usize| -> Vec<(usize, usize, T)> {
        (0..n_out)
            .map(|i| {
                let pos = if n_out == 1 {
                    0.0
                } else {
                    i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                };
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, T::lit(pos - lo as f64))
            })
            .collect()
    };
    let ys = coords(rows, out_rows);
    let xs = coords(cols, out_cols);
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (&src[y0 * cols..(y0 + 1) * cols], &src[y1 * cols..(y1 + 1) * cols]);
        for &(x0, x1, fx) in &xs {
            let top = lerp(r0[x0], r0[x1], fx);
            let bottom = lerp(r1[x0], r1[x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    out
}

/// Resizes a `rows × cols` spectrogram to `side × side`.
pub fn resize_to_square<T: Scalar>(src: &[T], rows: usize, cols: usize, side: usize) -> Vec<T> {
    resize_bilinear(src, rows, cols, side, side)
}

/// Normalizes in place; returns `true` for a degenerate (constant) input,
/// which becomes all zeros.
pub fn normalize<T: Scalar>(values: &mut [T], scheme: Normalization) -> bool {
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    for &v in values.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if values.is_empty() || lo == hi {
        values.iter_mut().for_each(|v| *v = T::zero());
        return true;
    }
    match scheme {
        Normalization::Minmax => {
            let span = hi - lo;
            values.iter_mut().for_each(|v| *v = (*v - lo) / span);
        }
        Normalization::Zscore => {
            let n = T::lit(values.len() as f64);
            let mean = values.iter().copied().sum::<T>() / n;
            let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let sd = var.sqrt();
            if sd == T::zero() {
                values.iter_mut().for_each(|v| *v = T::zero());
                return true;
            }
            values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
    false
}

/// Normalizes a square `side × side` matrix and replicates it into three
/// channels.
pub fn to_feature_tensor<T: Scalar>(m: &[T], side: usize, scheme: Normalization, clip_id: &str) -> FeatureTensor<T> {
    assert_eq!(m.len(), side * side, "expected a {side}x{side} matrix");
    let mut plane = m.to_vec();
    let degenerate = normalize(&mut plane, scheme);
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    FeatureTensor {
        values: Tensor::from_vec(&[3, side, side], data),
        clip_id: clip_id.to_string(),
        degenerate,
    }
}
