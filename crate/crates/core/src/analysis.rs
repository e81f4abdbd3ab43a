//! Gradient variance, optimal and Lipschitz-based sampling distributions, and
//! the squared-hinge SVM where every quantity has a closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, Vector};

/// L2-regularized squared-hinge classification problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexProblem {
    pub points: Vec<Vector>,
    /// Each −1 or +1.
    pub labels: Vec<f64>,
    pub lambda: f64,
}

impl ConvexProblem {
    pub fn new(points: Vec<Vector>, labels: Vec<f64>, lambda: f64) -> Result<Self> {
        if points.is_empty() || points.len() != labels.len() {
            return Err(Error::InvalidInput(
                "need one label per point and at least one point".into(),
            ));
        }
        let d = points[0].len();
        if points.iter().any(|x| x.len() != d) {
            return Err(Error::InvalidShape("points differ in dimension".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidInput("labels must be -1 or +1".into()));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidInput("regularization must be positive".into()));
        }
        Ok(ConvexProblem { points, labels, lambda })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn gradients(&self, w: &[f64]) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| svm_loss_grad(self, i, w).1.into_inner())
            .collect()
    }

    pub fn full_gradient(&self, w: &[f64]) -> Vector {
        let mut g = Vector::zeros(self.dim());
        for gi in self.gradients(w) {
            for (a, b) in g.iter_mut().zip(gi) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        g.iter_mut().for_each(|a| *a /= n);
        g
    }

    pub fn lipschitz_bounds(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|x| svm_lipschitz_bound(x, self.lambda))
            .collect()
    }

    /// Strong-convexity modulus of the average objective.
    pub fn strong_convexity(&self) -> f64 {
        self.lambda
    }

    /// Minimizer of the average objective, by gradient descent.
    pub fn optimum(&self, iters: usize) -> Vector {
        let smooth: f64 = self.points.iter().map(|x| 2.0 * dot(x, x)).sum::<f64>() / self.len() as f64 + self.lambda;
        let step = 1.0 / smooth;
        let mut w = Vector::zeros(self.dim());
        for _ in 0..iters {
            let g = self.full_gradient(&w);
            if l2_norm(&g) < 1e-14 {
                break;
            }
            for (a, b) in w.iter_mut().zip(g.iter()) {
                *a -= step * b;
            }
        }
        w
    }

    /// `(1/N) Σ ‖∇f_i(w*)‖²`, the gradient noise at the optimum.
    pub fn noise_at_optimum(&self, iters: usize) -> f64 {
        let w = self.optimum(iters);
        self.gradients(&w).iter().map(|g| dot(g, g)).sum::<f64>() / self.len() as f64
    }
}

/// `max(0, 1 − y x·w)² + (λ/2)‖w‖²` and its gradient.
pub fn svm_loss_grad(prob: &ConvexProblem, i: usize, w: &[f64]) -> (f64, Vector) {
    let x = &prob.points[i];
    let y = prob.labels[i];
    let slack = (1.0 - y * dot(x, w)).max(0.0);
    let loss = slack * slack + 0.5 * prob.lambda * dot(w, w);
    let grad = x
        .iter()
        .zip(w)
        .map(|(xi, wi)| -2.0 * slack * y * xi + prob.lambda * wi)
        .collect();
    (loss, grad)
}

/// `2(1 + ‖x‖/√λ)‖x‖ + √λ`, valid on the ball `‖w‖ ≤ λ^{-1/2}`.
pub fn svm_lipschitz_bound(x: &[f64], lambda: f64) -> f64 {
    let nx = l2_norm(x);
    let s = lambda.sqrt();
    2.0 * (1.0 + nx / s) * nx + s
}

fn normalize(weights: &[f64], what: &str) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::DegenerateDistribution(format!("no {what}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidDistribution(format!(
            "{what} must be finite and non-negative"
        )));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateDistribution(format!("all {what} are zero")));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// `p_i ∝ L_i`.
pub fn lipschitz_distribution(bounds: &[f64]) -> Result<Vec<f64>> {
    normalize(bounds, "Lipschitz bounds")
}

/// `p_i ∝ ‖g_i‖`, the variance-minimizing distribution.
pub fn optimal_distribution(grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    let norms: Vec<f64> = grads.iter().map(|g| l2_norm(g)).collect();
    normalize(&norms, "gradient norms")
}

/// Exact `Σ_i p_i ‖g_i/(N p_i) − ḡ‖²` with `ḡ` the mean gradient.
pub fn gradient_variance(grads: &[Vec<f64>], probs: &[f64]) -> Result<f64> {
    let n = grads.len();
    if n == 0 || probs.len() != n {
        return Err(Error::InvalidShape("need one probability per gradient".into()));
    }
    let d = grads[0].len();
    if grads.iter().any(|g| g.len() != d) {
        return Err(Error::InvalidShape("gradients differ in length".into()));
    }
    let mut mean = vec![0.0; d];
    for g in grads {
        for (m, x) in mean.iter_mut().zip(g) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut var = 0.0;
    for (i, (g, &p)) in grads.iter().zip(probs).enumerate() {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::InvalidProbability(p));
        }
        if p == 0.0 {
            if g.iter().any(|&x| x != 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "sample {i} has a nonzero gradient but zero probability"
                )));
            }
            continue;
        }
        let scale = 1.0 / (n as f64 * p);
        let sq: f64 = g.iter().zip(&mean).map(|(x, m)| (x * scale - m).powi(2)).sum();
        var += p * sq;
    }
    Ok(var)
}

/// `N Σ L² / (Σ L)²`, at least 1 by Cauchy–Schwarz.
pub fn bound_ratio(l: &[f64]) -> Result<f64> {
    if l.is_empty() || l.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput(
            "bounds must be finite, non-negative, and non-empty".into(),
        ));
    }
    let sum: f64 = l.iter().sum();
    if sum == 0.0 {
        return Err(Error::DegenerateDistribution("all bounds are zero".into()));
    }
    let sq: f64 = l.iter().map(|x| x * x).sum();
    Ok(l.len() as f64 * sq / (sum * sum))
}

/// Variance of the rescaled gradient under several distributions. Fields are
/// `None` when the distribution does not exist (for example all-zero weights).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub uniform: Option<f64>,
    pub optimal: Option<f64>,
    pub mined: Option<f64>,
    pub lipschitz: Option<f64>,
    pub bound_ratio: Option<f64>,
}

/// `ratio_source` defaults to the gradient norms when absent.
pub fn variance_report(
    grads: &[Vec<f64>],
    mined: Option<&[f64]>,
    lipschitz_bounds: Option<&[f64]>,
    ratio_source: Option<&[f64]>,
) -> Result<VarianceReport> {
    let n = grads.len();
    if n == 0 {
        return Err(Error::InvalidInput("no gradients".into()));
    }
    let uniform = vec![1.0 / n as f64; n];
    let under = |p: &[f64]| gradient_variance(grads, p).ok();
    let norms: Vec<f64> = grads.iter().map(|g| l2_norm(g)).collect();
    Ok(VarianceReport {
        uniform: under(&uniform),
        optimal: optimal_distribution(grads).ok().and_then(|p| under(&p)),
        mined: mined.and_then(under),
        lipschitz: lipschitz_bounds
            .and_then(|l| lipschitz_distribution(l).ok())
            .and_then(|p| under(&p)),
        bound_ratio: bound_ratio(ratio_source.unwrap_or(&norms)).ok(),
    })
}
