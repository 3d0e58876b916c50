use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ReflectorActivation;
use crate::linalg::DenseVector;
use crate::losses::{beta_at, cross_entropy, softmax, BetaSchedule};
use crate::model::adapter::{adapter_loss_and_grad, predict, AdapterDims, AdapterModel};
use crate::model::base::{base_loss_grad, ToyBaseEncoder};
use crate::model::optim::{adam_step, AdamConfig, AdamState, PlateauScheduler};

/// Every knob of base and adapter training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub plateau_min_delta: f64,
    pub base_batch: usize,
    pub adapter_batch: usize,
    pub flow_length: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub reflector_activation: ReflectorActivation,
    pub beta_schedule: BetaSchedule,
    pub max_epochs: usize,
    /// Epoch budget for per-episode fine-tuning on a support set.
    pub fine_tune_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            plateau_patience: 10,
            plateau_factor: 0.1,
            plateau_min_delta: 1e-4,
            base_batch: 150,
            adapter_batch: 4,
            flow_length: 3,
            hidden_dim: 128,
            latent_dim: 64,
            reflector_activation: ReflectorActivation::None,
            beta_schedule: BetaSchedule::default(),
            max_epochs: 50,
            fine_tune_epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam eps must be positive".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        if self.plateau_patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.base_batch == 0 || self.adapter_batch == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.hidden_dim == 0 || self.latent_dim == 0 {
            return bad("adapter widths must be positive".into());
        }
        self.beta_schedule.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn adapter_dims(&self, embedding_dim: usize, class_count: usize) -> AdapterDims {
        AdapterDims {
            embedding_dim,
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
            class_count,
            flow_length: self.flow_length,
            activation: self.reflector_activation,
        }
    }
}

/// One row of the training CSV log (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub ce: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<LogRow>,
    /// Mean total loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Metric the plateau scheduler saw after each epoch.
    pub epoch_metrics: Vec<f64>,
    /// Steps abandoned because a reflector fell below the norm floor.
    pub skipped_steps: usize,
    pub final_lr: f64,
}

fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DenseVector {
    DenseVector::from_raw((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

/// Trains all adapter parameters on labelled embeddings with Adam,
/// β-annealing and reduce-on-plateau.
///
/// The scheduler watches the noise-free training cross-entropy rather than
/// the sampled loss, whose epoch-to-epoch jitter would read as a plateau.
pub fn train_adapter<R: Rng + ?Sized>(
    model: &mut AdapterModel,
    samples: &[(&DenseVector, usize)],
    cfg: &TrainConfig,
    epochs: usize,
    rng: &mut R,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.classifier.out_dim();
    if let Some((_, y)) = samples.iter().find(|(_, y)| *y >= classes) {
        return Err(Error::IndexOutOfRange {
            index: *y,
            len: classes,
        });
    }
    let latent = model.mu_head.out_dim();
    let adam_cfg = cfg.adam();
    let mut adam = AdamState::new(model.param_count());
    let mut sched = PlateauScheduler::new(
        cfg.learning_rate,
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.plateau_min_delta,
    );
    let mut lr = cfg.learning_rate;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;

    for epoch in 0..epochs {
        let beta = beta_at(&cfg.beta_schedule, epoch);
        order.shuffle(rng);
        let mut epoch_total = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(cfg.adapter_batch) {
            let mut grad = vec![0.0; model.param_count()];
            let (mut ce, mut kl, mut total) = (0.0, 0.0, 0.0);
            let mut degenerate = false;
            for &i in batch {
                let (x, y) = samples[i];
                let eps = standard_normal(latent, rng);
                match adapter_loss_and_grad(model, x, y, &eps, beta) {
                    Ok((loss, g)) => {
                        ce += loss.ce;
                        kl += loss.kl;
                        total += loss.total;
                        let mut offset = 0;
                        g.visit_params(&mut |block| {
                            for (acc, v) in grad[offset..offset + block.len()].iter_mut().zip(block) {
                                *acc += v;
                            }
                            offset += block.len();
                        });
                    }
                    Err(Error::DegenerateReflector { norm, .. }) => {
                        warn!("epoch {epoch} step {step}: reflector norm {norm:e} below floor, step skipped");
                        degenerate = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if degenerate {
                history.skipped_steps += 1;
                step += 1;
                continue;
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            let mut params = model.to_flat();
            adam_step(&mut params, &grad, &mut adam, lr, &adam_cfg)?;
            if let Some(index) = params.iter().position(|p| !p.is_finite()) {
                return Err(Error::NonFinite { index });
            }
            model.load_flat(&params)?;
            history.rows.push(LogRow {
                epoch,
                step,
                ce: ce / n,
                kl: kl / n,
                beta,
                total: total / n,
                lr,
            });
            epoch_total += total;
            epoch_count += batch.len();
            step += 1;
        }
        let mean = if epoch_count > 0 {
            epoch_total / epoch_count as f64
        } else {
            f64::INFINITY
        };
        history.epoch_losses.push(mean);
        let metric = deterministic_ce(model, samples)?;
        history.epoch_metrics.push(metric);
        lr = sched.step(metric);
    }
    history.final_lr = lr;
    Ok(history)
}

/// Mean cross-entropy of the noise-free prediction over `samples`.
pub fn deterministic_ce(model: &AdapterModel, samples: &[(&DenseVector, usize)]) -> Result<f64> {
    let mut sum = 0.0;
    for &(x, y) in samples {
        sum += cross_entropy(&softmax(&predict(model, x)?), y)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Trains the toy encoder on seen-class inputs with plain cross-entropy.
pub fn train_base<R: Rng + ?Sized>(
    enc: &mut ToyBaseEncoder,
    samples: &[(&DenseVector, usize)],
    cfg: &TrainConfig,
    epochs: usize,
    rng: &mut R,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let adam_cfg = cfg.adam();
    let mut adam = AdamState::new(enc.param_count());
    let mut sched = PlateauScheduler::new(
        cfg.learning_rate,
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.plateau_min_delta,
    );
    let mut lr = cfg.learning_rate;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.base_batch) {
            let mut grads = enc.zeros_like();
            let mut ce = 0.0;
            for &i in batch {
                let (x, y) = samples[i];
                ce += base_loss_grad(enc, x, y, &mut grads)?.0;
            }
            let n = batch.len() as f64;
            let mut g = grads.to_flat();
            g.iter_mut().for_each(|v| *v /= n);
            let mut params = enc.to_flat();
            adam_step(&mut params, &g, &mut adam, lr, &adam_cfg)?;
            enc.load_flat(&params)?;
            history.rows.push(LogRow {
                epoch,
                step,
                ce: ce / n,
                kl: 0.0,
                beta: 0.0,
                total: ce / n,
                lr,
            });
            epoch_total += ce;
            step += 1;
        }
        let mean = epoch_total / samples.len() as f64;
        history.epoch_losses.push(mean);
        history.epoch_metrics.push(mean);
        lr = sched.step(mean);
    }
    history.final_lr = lr;
    Ok(history)
}
