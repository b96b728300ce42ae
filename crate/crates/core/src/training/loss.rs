use echo_nn::{Scalar, Tensor};

use super::TrainError;

/// Lower bound applied to probabilities before the log.
pub const CLAMP: f64 = 1e-12;

fn check_inputs<T: Scalar>(predicted: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<usize>, TrainError> {
    if predicted.shape() != target.shape() || predicted.shape().len() != 2 {
        return Err(TrainError::ShapeMismatch {
            predicted: predicted.shape().to_vec(),
            target: target.shape().to_vec(),
        });
    }
    let (n, c) = predicted.dims2();
    if n == 0 || c == 0 {
        return Err(TrainError::ShapeMismatch {
            predicted: predicted.shape().to_vec(),
            target: target.shape().to_vec(),
        });
    }
    let mut hot = Vec::with_capacity(n);
    for i in 0..n {
        let sum: f64 = predicted.outer(i).iter().map(|v| v.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(TrainError::InvalidLossInput(format!("row {i} of predicted sums to {sum}")));
        }
        let row = target.outer(i);
        let ones: Vec<usize> = (0..c).filter(|&j| row[j] == T::one()).collect();
        let zeros = row.iter().filter(|v| **v == T::zero()).count();
        if ones.len() != 1 || zeros != c - 1 {
            return Err(TrainError::InvalidLossInput(format!("row {i} of target is not one-hot")));
        }
        hot.push(ones[0]);
    }
    Ok(hot)
}

/// Mean over rows of `-log(max(ŷ[true], 1e-12))` for one-hot targets.
pub fn cross_entropy<T: Scalar>(predicted: &Tensor<T>, target: &Tensor<T>) -> Result<f64, TrainError> {
    let hot = check_inputs(predicted, target)?;
    let total: f64 = hot
        .iter()
        .enumerate()
        .map(|(i, &j)| -predicted.outer(i)[j].as_f64().max(CLAMP).ln())
        .sum();
    Ok(total / hot.len() as f64)
}

/// Loss for integer targets plus its gradient with respect to the logits
/// that produced `probs` through a softmax: `(ŷ - y) / N`.
pub fn cross_entropy_with_grad<T: Scalar>(probs: &Tensor<T>, targets: &[usize]) -> Result<(f64, Tensor<T>), TrainError> {
    let (n, c) = probs.dims2();
    if targets.len() != n || n == 0 {
        return Err(TrainError::ShapeMismatch {
            predicted: probs.shape().to_vec(),
            target: vec![targets.len()],
        });
    }
    let scale = T::lit(1.0 / n as f64);
    let mut grad = probs.clone();
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(TrainError::LabelOutOfRange { index: t, classes: c });
        }
        total -= probs.outer(i)[t].as_f64().max(CLAMP).ln();
        let row = grad.outer_mut(i);
        row[t] -= T::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok((total / n as f64, grad))
}
