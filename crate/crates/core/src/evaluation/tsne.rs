//! Exact t-SNE: Gaussian input affinities calibrated to a perplexity,
//! Student-t output affinities, KL minimized by gradient descent with
//! momentum, per-coordinate gains and early exaggeration.

use echo_nn::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_POINTS: usize = 5000;
/// Allowed gap, in bits, between a row's entropy and `log2(perplexity)`.
pub const ENTROPY_TOLERANCE: f64 = 1e-5;
const SEARCH_STEPS: usize = 200;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum TsneError {
    #[error("perplexity {perplexity} is infeasible for {points} points: {reason}")]
    PerplexityInfeasible { perplexity: f64, points: usize, reason: String },
    #[error("{points} points exceed the exact-method limit of {MAX_POINTS}")]
    TooManyPoints { points: usize },
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Defaults to `M / 12`.
    pub learning_rate: Option<f64>,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: None,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

/// Symmetric joint input affinities `[M × M]` and the calibrated rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Affinities {
    pub p: Vec<f64>,
    pub points: usize,
    /// Achieved entropy of each conditional row, in bits.
    pub entropies_bits: Vec<f64>,
    pub betas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    /// `[M × 2]`.
    pub coords: Tensor<f64>,
    /// KL(P‖Q) before each iteration and after the last one, always against
    /// the unexaggerated P.
    pub kl: Vec<f64>,
    pub exaggeration_end: usize,
}

impl TsneResult {
    pub fn kl_at_exaggeration_end(&self) -> f64 {
        self.kl[self.exaggeration_end.min(self.kl.len() - 1)]
    }

    pub fn final_kl(&self) -> f64 {
        *self.kl.last().expect("non-empty series")
    }
}

/// Row-major squared Euclidean distances of the rows of `x`.
pub fn squared_distances(x: &Tensor<f64>) -> Vec<f64> {
    let (m, _) = x.dims2();
    let mut d = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let s: f64 = x.outer(i).iter().zip(x.outer(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * m + j] = s;
            d[j * m + i] = s;
        }
    }
    d
}

/// `p_{j|i} ∝ exp(-β d_ij)` over `j ≠ i`, with its entropy in bits.
pub fn conditional_row(dist: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut row = vec![0.0; dist.len()];
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, &d) in dist.iter().enumerate() {
        if j == i {
            continue;
        }
        let shifted = d - min;
        let e = (-beta * shifted).exp();
        row[j] = e;
        sum += e;
        weighted += shifted * e;
    }
    for v in &mut row {
        *v /= sum;
    }
    let nats = sum.ln() + beta * weighted / sum;
    (row, nats / std::f64::consts::LN_2)
}

fn calibrate(dist: &[f64], i: usize, target: f64) -> Option<(Vec<f64>, f64, f64)> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    for _ in 0..SEARCH_STEPS {
        let (row, h) = conditional_row(dist, i, beta);
        if !h.is_finite() {
            return None;
        }
        if (h - target).abs() <= ENTROPY_TOLERANCE {
            return Some((row, h, beta));
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    None
}

/// Binary-searches each row's precision so its entropy is `log2(perplexity)`,
/// then symmetrizes: `p_ij = (p_{j|i} + p_{i|j}) / 2M`.
pub fn joint_probabilities(x: &Tensor<f64>, perplexity: f64) -> Result<Affinities, TsneError> {
    let (m, _) = x.dims2();
    let infeasible = |reason: String| TsneError::PerplexityInfeasible {
        perplexity,
        points: m,
        reason,
    };
    if m > MAX_POINTS {
        return Err(TsneError::TooManyPoints { points: m });
    }
    if !(perplexity >= 1.0) || (m as f64) < 3.0 * perplexity {
        return Err(infeasible("need at least 3 × perplexity points".into()));
    }
    let dist = squared_distances(x);
    let target = perplexity.log2();
    let mut cond = vec![0.0; m * m];
    let mut entropies_bits = Vec::with_capacity(m);
    let mut betas = Vec::with_capacity(m);
    for i in 0..m {
        let (row, h, beta) = calibrate(&dist[i * m..(i + 1) * m], i, target)
            .ok_or_else(|| infeasible(format!("entropy search did not converge for point {i}")))?;
        cond[i * m..(i + 1) * m].copy_from_slice(&row);
        entropies_bits.push(h);
        betas.push(beta);
    }
    let mut p = vec![0.0; m * m];
    let denom = 2.0 * m as f64;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                p[i * m + j] = (cond[i * m + j] + cond[j * m + i]) / denom;
            }
        }
    }
    Ok(Affinities {
        p,
        points: m,
        entropies_bits,
        betas,
    })
}

/// `KL(P‖Q)` for 2-D coordinates `y` (row-major `[M × 2]`).
pub fn kl_divergence(p: &[f64], y: &[f64], m: usize) -> f64 {
    kl_and_gradient(p, y, m, 1.0).0
}

/// KL of the unexaggerated `p` and the gradient of `KL(αP‖Q)` with
/// respect to `y`: `4 Σ_j (α p_ij − q_ij)(y_i − y_j)/(1 + |y_i − y_j|²)`.
pub fn kl_and_gradient(p: &[f64], y: &[f64], m: usize, exaggeration: f64) -> (f64, Vec<f64>) {
    let mut num = vec![0.0; m * m];
    let mut z = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * m + j] = v;
            num[j * m + i] = v;
            z += 2.0 * v;
        }
    }
    let mut kl = 0.0;
    let mut grad = vec![0.0; 2 * m];
    for i in 0..m {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..m {
            if i == j {
                continue;
            }
            let pij = p[i * m + j];
            let q = (num[i * m + j] / z).max(f64::MIN_POSITIVE);
            if pij > 0.0 {
                kl += pij * (pij / q).ln();
            }
            let coef = (exaggeration * pij - q) * num[i * m + j];
            gx += coef * (y[2 * i] - y[2 * j]);
            gy += coef * (y[2 * i + 1] - y[2 * j + 1]);
        }
        grad[2 * i] = 4.0 * gx;
        grad[2 * i + 1] = 4.0 * gy;
    }
    (kl, grad)
}

/// Projects the rows of `x` to 2-D. Serial and seeded, so reruns are
/// bit-identical.
pub fn tsne(x: &Tensor<f64>, params: &TsneParams) -> Result<TsneResult, TsneError> {
    let aff = joint_probabilities(x, params.perplexity)?;
    let m = aff.points;
    let lr = params.learning_rate.unwrap_or(m as f64 / 12.0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * m).map(|_| init.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * m];
    let mut gains = vec![1.0f64; 2 * m];
    let mut kl = Vec::with_capacity(params.iterations + 1);

    for it in 0..params.iterations {
        let early = it < params.exaggeration_iters;
        let alpha = if early { params.exaggeration } else { 1.0 };
        let momentum = if early {
            params.initial_momentum
        } else {
            params.final_momentum
        };
        let (k, grad) = kl_and_gradient(&aff.p, &y, m, alpha);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TsneError::NonFiniteGradient { iteration: it });
        }
        kl.push(k);
        for d in 0..2 * m {
            gains[d] = if (grad[d] > 0.0) != (update[d] > 0.0) {
                gains[d] + 0.2
            } else {
                (gains[d] * 0.8).max(MIN_GAIN)
            };
            update[d] = momentum * update[d] - lr * gains[d] * grad[d];
            y[d] += update[d];
        }
        for c in 0..2 {
            let mean = (0..m).map(|i| y[2 * i + c]).sum::<f64>() / m as f64;
            for i in 0..m {
                y[2 * i + c] -= mean;
            }
        }
    }
    kl.push(kl_divergence(&aff.p, &y, m));
    Ok(TsneResult {
        coords: Tensor::from_vec(&[m, 2], y),
        kl,
        exaggeration_end: params.exaggeration_iters.min(params.iterations),
    })
}
