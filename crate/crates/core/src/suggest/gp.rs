//! Gaussian-process regression with an isotropic squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Diagonal jitter added to the kernel matrix.
pub const JITTER: f64 = 1e-6;

/// Length-scales tried by the marginal-likelihood search.
pub const LENGTH_SCALES: [f64; 6] = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6];

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn se_kernel(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    (-0.5 * sq_dist(a, b) / (length_scale * length_scale)).exp()
}

/// Fitted posterior. Signal variance is 1; targets should be standardised.
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    length_scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

impl GaussianProcess {
    /// `None` if the kernel matrix is not positive definite.
    pub fn fit(x: &[Vec<f64>], y: &[f64], length_scale: f64) -> Option<Self> {
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            se_kernel(&x[i], &x[j], length_scale) + if i == j { JITTER } else { 0.0 }
        });
        let chol = k.cholesky()?;
        let yv = DVector::from_column_slice(y);
        let alpha = chol.solve(&yv);
        let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let log_likelihood = -0.5 * yv.dot(&alpha)
            - 0.5 * log_det
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        if !log_likelihood.is_finite() {
            return None;
        }
        Some(Self {
            x: x.to_vec(),
            length_scale,
            chol,
            alpha,
            log_likelihood,
        })
    }

    /// Fit with the length-scale of highest marginal likelihood.
    pub fn fit_ml(x: &[Vec<f64>], y: &[f64]) -> Option<Self> {
        LENGTH_SCALES
            .iter()
            .filter_map(|&l| Self::fit(x, y, l))
            .fold(None, |best: Option<Self>, gp| match best {
                Some(b) if b.log_likelihood >= gp.log_likelihood => Some(b),
                _ => Some(gp),
            })
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Posterior mean and variance at `point`.
    pub fn predict(&self, point: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| se_kernel(xi, point, self.length_scale)),
        );
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).unwrap_or_else(|| ks.clone());
        let var = (1.0 - v.dot(&v)).max(0.0);
        (mean, var)
    }
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` for a minimisation target.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sd = var.sqrt();
    if sd < 1e-12 {
        return (best - mean).max(0.0);
    }
    let z = (best - mean) / sd;
    (best - mean) * normal_cdf(z) + sd * normal_pdf(z)
}
