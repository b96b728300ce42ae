use crate::layers::Param;
use crate::Scalar;

/// Adam with bias-corrected moments.
///
/// Parameters are addressed by a stable index (their visit order), so the
/// same model must be presented in the same order on every step.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    /// Conventional moment coefficients `(0.9, 0.999)` and `eps = 1e-8`.
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Advances the step counter; call once before the `update`s of a step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, index: usize, p: &mut Param<T>) {
        assert!(self.t > 0, "Adam::update before begin_step");
        if self.moments.len() <= index {
            self.moments.resize_with(index + 1, || (Vec::new(), Vec::new()));
        }
        let (m, v) = &mut self.moments[index];
        if m.is_empty() {
            m.resize(p.value.len(), T::zero());
            v.resize(p.value.len(), T::zero());
        }
        assert_eq!(m.len(), p.value.len(), "parameter {index} changed shape");
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let c1 = T::lit(1.0 - self.beta1.powi(self.t));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        let one = T::one();
        for (((w, &g), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
