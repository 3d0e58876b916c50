//! Diagonal-Gaussian base posterior `q(z^(0) | x)` and the densities used by
//! the KL part of the objective.

use crate::error::{Error, Result};
use crate::linalg::DenseVector;

/// Bounds applied to `log_var` so `exp` stays finite.
pub const LOG_VAR_MIN: f64 = -12.0;
pub const LOG_VAR_MAX: f64 = 12.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    mu: DenseVector,
    log_var: DenseVector,
}

impl GaussianPosterior {
    /// Builds a posterior; `log_var` entries are clamped to `[-12, 12]`.
    pub fn new(mu: DenseVector, mut log_var: DenseVector) -> Result<Self> {
        if mu.dim() != log_var.dim() {
            return Err(Error::DimensionMismatch {
                expected: mu.dim(),
                found: log_var.dim(),
            });
        }
        for lv in log_var.as_mut_slice() {
            *lv = lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
        }
        Ok(GaussianPosterior { mu, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianPosterior {
            mu: DenseVector::zeros(dim),
            log_var: DenseVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn mu(&self) -> &DenseVector {
        &self.mu
    }

    pub fn log_var(&self) -> &DenseVector {
        &self.log_var
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_var.as_slice().iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// A reparameterized draw together with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z0: DenseVector,
    pub eps: DenseVector,
}

/// `z0 = mu + exp(log_var / 2) * eps`.
pub fn reparameterize(post: &GaussianPosterior, eps: &DenseVector) -> Result<LatentSample> {
    if eps.dim() != post.dim() {
        return Err(Error::DimensionMismatch {
            expected: post.dim(),
            found: eps.dim(),
        });
    }
    let z0 = post
        .mu
        .as_slice()
        .iter()
        .zip(post.log_var.as_slice())
        .zip(eps.as_slice())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Ok(LatentSample {
        z0: DenseVector::from_raw(z0),
        eps: eps.clone(),
    })
}

pub fn log_density_diag_gaussian(z: &DenseVector, post: &GaussianPosterior) -> f64 {
    z.as_slice()
        .iter()
        .zip(post.mu.as_slice())
        .zip(post.log_var.as_slice())
        .map(|((zi, m), lv)| {
            let d = zi - m;
            -HALF_LN_2PI - 0.5 * lv - d * d / (2.0 * lv.exp())
        })
        .sum()
}

pub fn log_density_standard_normal(z: &DenseVector) -> f64 {
    z.as_slice()
        .iter()
        .map(|zi| -HALF_LN_2PI - 0.5 * zi * zi)
        .sum()
}

/// Single-sample estimate of `E_q[ln q(z0|x) - ln p(zT)]`.
///
/// A single draw can be negative; only the expectation is a divergence.
pub fn kl_flow_term(post: &GaussianPosterior, sample: &LatentSample, z_t: &DenseVector) -> f64 {
    log_density_diag_gaussian(&sample.z0, post) - log_density_standard_normal(z_t)
}

/// Closed-form `KL(N(mu, diag(exp(log_var))) || N(0, I))`.
pub fn kl_analytic_diag(post: &GaussianPosterior) -> f64 {
    0.5 * post
        .mu
        .as_slice()
        .iter()
        .zip(post.log_var.as_slice())
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}
