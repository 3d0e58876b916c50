use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    for found in [grads.len(), state.m.len(), state.v.len()] {
        if found != n {
            return Err(Error::ShapeMismatch { expected: n, found });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Reduce-on-plateau for a metric that should decrease.
///
/// After `patience` consecutive epochs without an improvement larger than
/// `min_delta`, the rate is multiplied by `factor` and the counter restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    bad_epochs: usize,
    reductions: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_delta: f64) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            min_delta,
            best: f64::INFINITY,
            bad_epochs: 0,
            reductions: 0,
        }
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }

    /// Feeds one epoch's metric; returns the learning rate for the next epoch.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best - self.min_delta {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
                self.reductions += 1;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &[1.0], &mut s, 1e-3, &cfg).unwrap();
        let expected = -1e-3 / (1.0 + cfg.eps);
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        assert!(matches!(
            adam_step(&mut p, &[1.0], &mut s, 1e-3, &AdamConfig::default()),
            Err(Error::ShapeMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut theta = vec![1.0];
        let mut s = AdamState::new(1);
        let mut history = vec![];
        for _ in 0..100 {
            let g = [2.0 * theta[0]];
            adam_step(&mut theta, &g, &mut s, 5e-3, &AdamConfig::default()).unwrap();
            history.push(theta[0].abs());
        }
        assert!(theta[0].abs() < 0.9);
        assert!(history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn plateau_counts() {
        let mut s = PlateauScheduler::new(1.0, 0.1, 10, 1e-4);
        for e in 0..50 {
            s.step(10.0 - e as f64);
        }
        assert_eq!(s.lr, 1.0);

        let mut s = PlateauScheduler::new(1.0, 0.1, 10, 1e-4);
        let lrs: Vec<f64> = (0..22).map(|_| s.step(1.0)).collect();
        assert_eq!(lrs[9], 1.0);
        assert!((lrs[10] - 0.1).abs() < 1e-15);
        assert_eq!(s.reductions(), 2);
        assert!((lrs[20] - 0.01).abs() < 1e-15);
    }
}
