//! Adapter objective: cross-entropy plus a β-weighted KL term. The Jacobian
//! term of the flow objective is carried explicitly and is always zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseVector;

/// Probabilities are clamped to this value inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Linear decay of β from `beta_start` to `beta_end` over `anneal_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub anneal_epochs: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule {
            beta_start: 1.0,
            beta_end: 0.0,
            anneal_epochs: 10,
        }
    }
}

impl BetaSchedule {
    pub fn new(beta_start: f64, beta_end: f64, anneal_epochs: usize) -> Result<Self> {
        let s = BetaSchedule {
            beta_start,
            beta_end,
            anneal_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_start >= 0.0 && self.beta_end >= 0.0) {
            return Err(Error::InvalidConfig("beta values must be non-negative".into()));
        }
        if self.beta_end > self.beta_start {
            return Err(Error::InvalidConfig(format!(
                "beta must not increase: start {} < end {}",
                self.beta_start, self.beta_end
            )));
        }
        if self.anneal_epochs == 0 {
            return Err(Error::InvalidConfig("anneal-epochs must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn beta_at(schedule: &BetaSchedule, epoch: usize) -> f64 {
    let progress = epoch.min(schedule.anneal_epochs) as f64 / schedule.anneal_epochs as f64;
    (1.0 - progress) * schedule.beta_start + progress * schedule.beta_end
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub kl: f64,
    pub beta: f64,
    pub jacobian: f64,
    pub total: f64,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &DenseVector) -> DenseVector {
    let x = logits.as_slice();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    DenseVector::from_raw(exps.into_iter().map(|e| e / sum).collect())
}

/// `-ln probs[y]`, with the probability clamped at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &DenseVector, y: usize) -> Result<f64> {
    if y >= probs.dim() {
        return Err(Error::IndexOutOfRange {
            index: y,
            len: probs.dim(),
        });
    }
    Ok(-probs[y].clamp(PROB_FLOOR, 1.0).ln())
}

pub fn adapter_loss(logits: &DenseVector, y: usize, kl: f64, beta: f64) -> Result<LossBreakdown> {
    let ce = cross_entropy(&softmax(logits), y)?;
    Ok(LossBreakdown {
        ce,
        kl,
        beta,
        jacobian: 0.0,
        total: ce + beta * kl,
    })
}

/// `d CE / d logits = softmax(logits) - onehot(y)`.
pub fn cross_entropy_logit_grad(logits: &DenseVector, y: usize) -> Result<DenseVector> {
    if y >= logits.dim() {
        return Err(Error::IndexOutOfRange {
            index: y,
            len: logits.dim(),
        });
    }
    let mut g = softmax(logits);
    g[y] -= 1.0;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(data: &[f64]) -> DenseVector {
        DenseVector::new(data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&vec(&[0.0, 0.0])).as_slice(), &[0.5, 0.5]);
        let p = softmax(&vec(&[1000.0, 1000.0, 1000.0]));
        for x in p.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&vec(&[1f64.ln(), 2f64.ln(), 3f64.ln()]));
        for (i, x) in p.as_slice().iter().enumerate() {
            assert!((x - (i as f64 + 1.0) / 6.0).abs() < 1e-15);
        }
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy(&vec(&[1.0, 0.0, 0.0]), 0).unwrap() <= 1e-7);
        let uniform = vec(&[0.2; 5]);
        assert!((cross_entropy(&uniform, 3).unwrap() - 5f64.ln()).abs() < 1e-15);
        let ce = cross_entropy(&vec(&[0.7, 0.2, 0.1]), 1).unwrap();
        assert!((ce - 1.6094).abs() < 1e-4);
        assert!(matches!(
            cross_entropy(&uniform, 5),
            Err(Error::IndexOutOfRange { index: 5, len: 5 })
        ));
        // clamp keeps saturated probabilities finite
        assert!(cross_entropy(&vec(&[1.0, 0.0]), 1).unwrap().is_finite());
    }

    #[test]
    fn adapter_loss_examples() {
        let logits = vec(&[0.3, -0.2, 1.1]);
        let ce = cross_entropy(&softmax(&logits), 2).unwrap();
        let l = adapter_loss(&logits, 2, 0.0, 0.7).unwrap();
        assert_eq!(l.total, ce);
        let l = adapter_loss(&logits, 2, 123.0, 0.0).unwrap();
        assert_eq!(l.total, ce);
        assert_eq!(l.jacobian, 0.0);
        // ce = ln 2 for two equal logits
        let l = adapter_loss(&vec(&[0.0, 0.0]), 0, 0.4, 0.5).unwrap();
        assert!((l.total - (2f64.ln() + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn linear_combination() {
        // ce = 1.0 exactly when p_y = 1/e
        let e = std::f64::consts::E;
        let p1 = 1.0 / e;
        let logits = vec(&[p1.ln(), (1.0 - p1).ln()]);
        let l = adapter_loss(&logits, 0, 0.4, 0.5).unwrap();
        assert!((l.ce - 1.0).abs() < 1e-12);
        assert!((l.total - 1.2).abs() < 1e-12);
    }

    #[test]
    fn beta_examples() {
        let s = BetaSchedule::new(1.0, 0.0, 10).unwrap();
        assert_eq!(beta_at(&s, 0), 1.0);
        assert_eq!(beta_at(&s, 5), 0.5);
        assert_eq!(beta_at(&s, 25), 0.0);
        assert!(BetaSchedule::new(0.0, 1.0, 10).is_err());
        assert!(BetaSchedule::new(1.0, 0.0, 0).is_err());
    }

    #[test]
    fn logit_gradient_is_softmax_minus_onehot() {
        let logits = vec(&[0.5, -1.0, 2.0]);
        let g = cross_entropy_logit_grad(&logits, 1).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = logits.clone();
            up[i] += h;
            let mut down = logits.clone();
            down[i] -= h;
            let fd = (adapter_loss(&up, 1, 0.0, 0.0).unwrap().total
                - adapter_loss(&down, 1, 0.0, 0.0).unwrap().total)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }
}
