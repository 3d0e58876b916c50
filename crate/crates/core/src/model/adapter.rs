//! Adapter classifier: embedding -> hidden -> (mu, log_var) -> z0 -> flow -> logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{relu, relu_backward, Affine};
use crate::error::{Error, Result};
use crate::flow::{
    flow_backward, flow_forward, flow_forward_lenient, FlowStack, FlowTrace, ReflectorActivation,
};
use crate::linalg::DenseVector;
use crate::losses::{adapter_loss, cross_entropy_logit_grad, LossBreakdown};
use crate::posterior::{
    kl_flow_term, reparameterize, GaussianPosterior, LatentSample, LOG_VAR_MAX, LOG_VAR_MIN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterDims {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub class_count: usize,
    pub flow_length: usize,
    pub activation: ReflectorActivation,
}

impl AdapterDims {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig("adapter widths must be positive".into()));
        }
        if self.class_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "adapter needs at least 2 classes, got {}",
                self.class_count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    pub hidden: Affine,
    pub mu_head: Affine,
    pub logvar_head: Affine,
    pub flow: FlowStack,
    pub classifier: Affine,
}

impl AdapterModel {
    pub fn new(
        hidden: Affine,
        mu_head: Affine,
        logvar_head: Affine,
        flow: FlowStack,
        classifier: Affine,
    ) -> Result<Self> {
        let h = hidden.out_dim();
        let m = mu_head.out_dim();
        let shape_err = |what: &str| Err(Error::Shape(format!("adapter: {what}")));
        if mu_head.in_dim() != h || logvar_head.in_dim() != h {
            return shape_err("posterior heads must read the hidden layer");
        }
        if logvar_head.out_dim() != m {
            return shape_err("mu and log_var heads must agree on the latent dim");
        }
        if let Some(first) = flow.first_map() {
            if first.in_dim() != h || first.out_dim() != m {
                return shape_err("flow must map hidden -> latent");
            }
        }
        if classifier.in_dim() != m {
            return shape_err("classifier must read the latent dim");
        }
        if classifier.out_dim() < 2 {
            return shape_err("classifier needs at least 2 classes");
        }
        Ok(AdapterModel {
            hidden,
            mu_head,
            logvar_head,
            flow,
            classifier,
        })
    }

    pub fn init<R: Rng + ?Sized>(dims: &AdapterDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let hidden = Affine::init_uniform(dims.hidden_dim, dims.embedding_dim, fan(dims.embedding_dim), 0.01, rng);
        let mu_head = Affine::init_uniform(dims.latent_dim, dims.hidden_dim, fan(dims.hidden_dim), 0.01, rng);
        let logvar_head = Affine::init_uniform(dims.latent_dim, dims.hidden_dim, fan(dims.hidden_dim), 0.01, rng);
        let flow = FlowStack::init(dims.flow_length, dims.hidden_dim, dims.latent_dim, dims.activation, rng);
        let classifier = Affine::init_uniform(dims.class_count, dims.latent_dim, fan(dims.latent_dim), 0.01, rng);
        AdapterModel::new(hidden, mu_head, logvar_head, flow, classifier)
    }

    pub fn dims(&self) -> AdapterDims {
        AdapterDims {
            embedding_dim: self.hidden.in_dim(),
            hidden_dim: self.hidden.out_dim(),
            latent_dim: self.mu_head.out_dim(),
            class_count: self.classifier.out_dim(),
            flow_length: self.flow.length(),
            activation: self.flow.activation(),
        }
    }

    /// Replaces the classification head with a fresh one over `class_count` classes.
    pub fn reset_classifier<R: Rng + ?Sized>(&mut self, class_count: usize, rng: &mut R) {
        let m = self.mu_head.out_dim();
        self.classifier = Affine::init_uniform(class_count, m, 1.0 / (m as f64).sqrt(), 0.01, rng);
    }

    pub fn zeros_like(&self) -> Self {
        AdapterModel {
            hidden: self.hidden.zeros_like(),
            mu_head: self.mu_head.zeros_like(),
            logvar_head: self.logvar_head.zeros_like(),
            flow: self.flow.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden.param_count()
            + self.mu_head.param_count()
            + self.logvar_head.param_count()
            + self.flow.param_count()
            + self.classifier.param_count()
    }

    /// Visits parameter blocks in declaration order: hidden, mu head,
    /// log-var head, flow (first map, then layers), classifier. Each affine
    /// block is its weight followed by its bias.
    pub fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        self.hidden.visit(f);
        self.mu_head.visit(f);
        self.logvar_head.visit(f);
        self.flow.visit(f);
        self.classifier.visit(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.hidden.visit_mut(f);
        self.mu_head.visit_mut(f);
        self.logvar_head.visit_mut(f);
        self.flow.visit_mut(f);
        self.classifier.visit_mut(f);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |block| out.extend_from_slice(block));
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: flat.len(),
            });
        }
        let mut offset = 0;
        self.visit_params_mut(&mut |block| {
            block.copy_from_slice(&flat[offset..offset + block.len()]);
            offset += block.len();
        });
        Ok(())
    }
}

/// Everything the reverse pass needs from a forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterTrace {
    pub embedding: DenseVector,
    pub hidden_pre: Vec<f64>,
    pub hidden: DenseVector,
    /// Log-variance head output before clamping.
    pub log_var_raw: Vec<f64>,
    pub posterior: GaussianPosterior,
    pub sample: LatentSample,
    pub flow: FlowTrace,
    pub z_t: DenseVector,
    pub logits: DenseVector,
}

struct Encoded {
    hidden_pre: Vec<f64>,
    hidden: DenseVector,
    log_var_raw: Vec<f64>,
    posterior: GaussianPosterior,
}

fn encode(m: &AdapterModel, embedding: &DenseVector) -> Result<Encoded> {
    if embedding.dim() != m.hidden.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: m.hidden.in_dim(),
            found: embedding.dim(),
        });
    }
    let hidden_pre = m.hidden.forward(embedding.as_slice());
    let hidden = DenseVector::from_raw(relu(&hidden_pre));
    let mu = m.mu_head.forward(hidden.as_slice());
    let log_var_raw = m.logvar_head.forward(hidden.as_slice());
    let posterior = GaussianPosterior::new(
        DenseVector::new(mu)?,
        DenseVector::new(log_var_raw.clone())?,
    )?;
    Ok(Encoded {
        hidden_pre,
        hidden,
        log_var_raw,
        posterior,
    })
}

/// Forward pass for one embedding and one noise draw.
///
/// Returns class logits, the single-sample KL term and the trace.
pub fn adapter_forward(
    m: &AdapterModel,
    embedding: &DenseVector,
    eps: &DenseVector,
) -> Result<(DenseVector, f64, AdapterTrace)> {
    let enc = encode(m, embedding)?;
    let sample = reparameterize(&enc.posterior, eps)?;
    let (z_t, flow_trace, _log_det) = flow_forward(&m.flow, &sample.z0, &enc.hidden)?;
    let logits = DenseVector::from_raw(m.classifier.forward(z_t.as_slice()));
    let kl = kl_flow_term(&enc.posterior, &sample, &z_t);
    let trace = AdapterTrace {
        embedding: embedding.clone(),
        hidden_pre: enc.hidden_pre,
        hidden: enc.hidden,
        log_var_raw: enc.log_var_raw,
        posterior: enc.posterior,
        sample,
        flow: flow_trace,
        z_t,
        logits: logits.clone(),
    };
    Ok((logits, kl, trace))
}

/// Deterministic prediction at `eps = 0`; degenerate reflectors act as identity.
pub fn predict(m: &AdapterModel, embedding: &DenseVector) -> Result<DenseVector> {
    let enc = encode(m, embedding)?;
    let z0 = enc.posterior.mu().clone();
    let (z_t, _, _) = flow_forward_lenient(&m.flow, &z0, &enc.hidden)?;
    Ok(DenseVector::from_raw(m.classifier.forward(z_t.as_slice())))
}

/// Reverse pass given `dL/dlogits` and `dL/dkl` (the β weight).
pub fn adapter_backward(
    m: &AdapterModel,
    trace: &AdapterTrace,
    grad_logits: &DenseVector,
    grad_kl: f64,
) -> Result<AdapterModel> {
    let dims = m.dims();
    if trace.embedding.dim() != dims.embedding_dim
        || trace.hidden.dim() != dims.hidden_dim
        || trace.z_t.dim() != dims.latent_dim
        || trace.logits.dim() != dims.class_count
        || grad_logits.dim() != dims.class_count
    {
        return Err(Error::TraceMismatch(
            "adapter trace dimensions disagree with the model".into(),
        ));
    }
    let mut g = m.zeros_like();

    let mut gz_t = m
        .classifier
        .backward(trace.z_t.as_slice(), grad_logits.as_slice(), &mut g.classifier);
    // d(-ln p(zT))/dzT = zT under the standard-normal prior
    for (g, z) in gz_t.iter_mut().zip(trace.z_t.as_slice()) {
        *g += grad_kl * z;
    }
    let fg = flow_backward(&m.flow, &trace.flow, &DenseVector::from_raw(gz_t))?;
    g.flow = fg.params;

    let latent = dims.latent_dim;
    let mut g_mu = vec![0.0; latent];
    let mut g_lv = vec![0.0; latent];
    let mu = trace.posterior.mu().as_slice();
    let lv = trace.posterior.log_var().as_slice();
    let z0 = trace.sample.z0.as_slice();
    let eps = trace.sample.eps.as_slice();
    for i in 0..latent {
        let var = lv[i].exp();
        let d = z0[i] - mu[i];
        // ln q(z0) depends on z0, mu and log_var directly; z0 also depends on
        // mu and log_var through the reparameterization.
        let gz0 = fg.grad_z0[i] - grad_kl * d / var;
        g_mu[i] = gz0 + grad_kl * d / var;
        g_lv[i] = gz0 * 0.5 * (0.5 * lv[i]).exp() * eps[i] + grad_kl * (-0.5 + d * d / (2.0 * var));
        let raw = trace.log_var_raw[i];
        if !(LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw) {
            g_lv[i] = 0.0;
        }
    }

    let h = trace.hidden.as_slice();
    let mut g_h = m.mu_head.backward(h, &g_mu, &mut g.mu_head);
    let g_h_lv = m.logvar_head.backward(h, &g_lv, &mut g.logvar_head);
    for ((a, b), c) in g_h.iter_mut().zip(&g_h_lv).zip(fg.grad_h.as_slice()) {
        *a += b + c;
    }
    relu_backward(&trace.hidden_pre, &mut g_h);
    m.hidden
        .backward(trace.embedding.as_slice(), &g_h, &mut g.hidden);
    Ok(g)
}

/// Loss `CE + beta * KL` for one labelled embedding and its parameter gradient.
pub fn adapter_loss_and_grad(
    m: &AdapterModel,
    embedding: &DenseVector,
    label: usize,
    eps: &DenseVector,
    beta: f64,
) -> Result<(LossBreakdown, AdapterModel)> {
    let (logits, kl, trace) = adapter_forward(m, embedding, eps)?;
    let loss = adapter_loss(&logits, label, kl, beta)?;
    let grad_logits = cross_entropy_logit_grad(&logits, label)?;
    let grads = adapter_backward(m, &trace, &grad_logits, beta)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::softmax;
    use crate::posterior::kl_analytic_diag;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(flow_length: usize) -> AdapterDims {
        AdapterDims {
            embedding_dim: 5,
            hidden_dim: 6,
            latent_dim: 4,
            class_count: 3,
            flow_length,
            activation: ReflectorActivation::None,
        }
    }

    fn vec(data: &[f64]) -> DenseVector {
        DenseVector::new(data.to_vec()).unwrap()
    }

    #[test]
    fn zero_heads_give_classifier_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = AdapterModel::init(&dims(0), &mut rng).unwrap();
        m.mu_head = m.mu_head.zeros_like();
        m.logvar_head = m.logvar_head.zeros_like();
        let (logits, kl, trace) =
            adapter_forward(&m, &vec(&[1.0, -2.0, 0.5, 0.3, 0.0]), &DenseVector::zeros(4)).unwrap();
        assert_eq!(logits, m.classifier.bias);
        assert_eq!(kl, kl_analytic_diag(&trace.posterior));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = AdapterModel::init(&dims(3), &mut rng).unwrap();
        let e = vec(&[0.2, 0.4, -1.0, 0.7, 0.1]);
        let eps = vec(&[0.5, -0.1, 1.2, 0.0]);
        let a = adapter_forward(&m, &e, &eps).unwrap();
        let b = adapter_forward(&m, &e, &eps).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn classifier_gradient_at_zero_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = AdapterModel::init(&dims(2), &mut rng).unwrap();
        let e = vec(&[0.2, 0.4, -1.0, 0.7, 0.1]);
        let eps = vec(&[0.5, -0.1, 1.2, 0.0]);
        let (logits, _, trace) = adapter_forward(&m, &e, &eps).unwrap();
        let (_, g) = adapter_loss_and_grad(&m, &e, 1, &eps, 0.0).unwrap();
        let mut delta = softmax(&logits);
        delta[1] -= 1.0;
        for r in 0..3 {
            for c in 0..4 {
                let expected = delta[r] * trace.z_t[c];
                assert!((g.classifier.weight.get(r, c) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = AdapterModel::init(&dims(3), &mut rng).unwrap();
        let (_, _, trace) =
            adapter_forward(&m, &vec(&[0.2, 0.4, -1.0, 0.7, 0.1]), &vec(&[0.1, 0.2, 0.3, 0.4]))
                .unwrap();
        let g = adapter_backward(&m, &trace, &DenseVector::zeros(3), 0.0).unwrap();
        assert!(g.to_flat().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = AdapterModel::init(&dims(2), &mut rng).unwrap();
        let flat = m.to_flat();
        assert_eq!(flat.len(), m.param_count());
        let mut other = AdapterModel::init(&dims(2), &mut rng).unwrap();
        other.load_flat(&flat).unwrap();
        assert_eq!(other, m);
        assert!(matches!(
            other.load_flat(&flat[1..]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn flow_does_not_touch_posterior_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let with_flow = AdapterModel::init(&dims(3), &mut rng).unwrap();
        let mut without = with_flow.clone();
        without.flow = FlowStack::identity();
        let e = vec(&[0.2, 0.4, -1.0, 0.7, 0.1]);
        let eps = vec(&[0.5, -0.1, 1.2, 0.0]);
        let (_, _, a) = adapter_forward(&with_flow, &e, &eps).unwrap();
        let (_, _, b) = adapter_forward(&without, &e, &eps).unwrap();
        assert_eq!(a.posterior, b.posterior);
        assert_eq!(a.sample, b.sample);
        assert_eq!(a.hidden, b.hidden);
        assert_ne!(a.z_t, b.z_t);
    }

    #[test]
    fn embedding_dim_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = AdapterModel::init(&dims(1), &mut rng).unwrap();
        assert!(matches!(
            adapter_forward(&m, &vec(&[1.0]), &DenseVector::zeros(4)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(AdapterModel::init(&AdapterDims { class_count: 1, ..dims(1) }, &mut rng).is_err());
    }
}
