//! Small MLP standing in for a pretrained base model. It is trained on the
//! seen classes and its penultimate activation is the embedding the adapter
//! consumes.

use rand::Rng;

use crate::affine::{relu, relu_backward, Affine};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBaseEncoder {
    /// Embedding layers; ReLU between consecutive layers, none after the last.
    pub layers: Vec<Affine>,
    /// Seen-class head, applied to `relu(embedding)`.
    pub head: Affine,
}

impl ToyBaseEncoder {
    pub fn new(layers: Vec<Affine>, head: Affine) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("encoder needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer emits {} features but the next expects {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        let out = layers.last().unwrap().out_dim();
        if head.in_dim() != out {
            return Err(Error::Shape(format!(
                "head expects {} features, encoder emits {out}",
                head.in_dim()
            )));
        }
        Ok(ToyBaseEncoder { layers, head })
    }

    /// Single identity layer with a zero head; handy for wiring tests.
    pub fn identity(dim: usize, class_count: usize) -> Self {
        let layer = Affine {
            weight: DenseMatrix::identity(dim),
            bias: DenseVector::zeros(dim),
        };
        ToyBaseEncoder {
            layers: vec![layer],
            head: Affine::zeros(class_count, dim),
        }
    }

    /// `widths` lists the input dim, any hidden widths, and the embedding dim.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], class_count: usize, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "encoder widths need an input and an output dim, all positive".into(),
            ));
        }
        let layers = widths
            .windows(2)
            .map(|w| Affine::init_uniform(w[1], w[0], 1.0 / (w[0] as f64).sqrt(), 0.01, rng))
            .collect();
        let out = *widths.last().unwrap();
        let head = Affine::init_uniform(class_count, out, 1.0 / (out as f64).sqrt(), 0.0, rng);
        ToyBaseEncoder::new(layers, head)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn class_count(&self) -> usize {
        self.head.out_dim()
    }

    /// Input dim followed by the output width of every layer.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Affine::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Affine::param_count).sum::<usize>() + self.head.param_count()
    }

    pub fn zeros_like(&self) -> Self {
        ToyBaseEncoder {
            layers: self.layers.iter().map(Affine::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            l.visit(f);
        }
        self.head.visit(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
        self.head.visit_mut(f);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |b| out.extend_from_slice(b));
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
        self.visit_params_mut(&mut |b| {
            b.copy_from_slice(&flat[offset..offset + b.len()]);
            offset += b.len();
        });
        Ok(())
    }
}

/// Returns `(embedding, seen-class logits)`.
pub fn base_forward(enc: &ToyBaseEncoder, x: &DenseVector) -> Result<(DenseVector, DenseVector)> {
    let (emb, logits, _) = forward_cached(enc, x)?;
    Ok((emb, logits))
}

/// Layer inputs for the backward pass.
struct Cache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn forward_cached(enc: &ToyBaseEncoder, x: &DenseVector) -> Result<(DenseVector, DenseVector, Cache)> {
    if x.dim() != enc.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: enc.input_dim(),
            found: x.dim(),
        });
    }
    let mut cache = Cache {
        inputs: Vec::with_capacity(enc.layers.len()),
        pre: Vec::with_capacity(enc.layers.len()),
    };
    let mut a = x.as_slice().to_vec();
    let last = enc.layers.len() - 1;
    for (i, layer) in enc.layers.iter().enumerate() {
        let pre = layer.forward(&a);
        cache.inputs.push(std::mem::take(&mut a));
        a = if i < last { relu(&pre) } else { pre.clone() };
        cache.pre.push(pre);
    }
    let logits = enc.head.forward(&relu(&a));
    Ok((
        DenseVector::from_raw(a),
        DenseVector::from_raw(logits),
        cache,
    ))
}

/// Forward and reverse pass for one labelled input. Returns the logits and
/// accumulates parameter gradients of `CE(softmax(logits), y)` into `grads`.
pub(crate) fn base_loss_grad(
    enc: &ToyBaseEncoder,
    x: &DenseVector,
    label: usize,
    grads: &mut ToyBaseEncoder,
) -> Result<(f64, DenseVector)> {
    let (emb, logits, cache) = forward_cached(enc, x)?;
    let ce = crate::losses::cross_entropy(&crate::losses::softmax(&logits), label)?;
    let gl = crate::losses::cross_entropy_logit_grad(&logits, label)?;
    let emb_act = relu(emb.as_slice());
    let mut g = enc.head.backward(&emb_act, gl.as_slice(), &mut grads.head);
    relu_backward(emb.as_slice(), &mut g);
    for i in (0..enc.layers.len()).rev() {
        if i < enc.layers.len() - 1 {
            relu_backward(&cache.pre[i], &mut g);
        }
        g = enc.layers[i].backward(&cache.inputs[i], &g, &mut grads.layers[i]);
    }
    Ok((ce, logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let enc = ToyBaseEncoder::identity(2, 3);
        let (emb, logits) = base_forward(&enc, &DenseVector::new(vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(emb.as_slice(), &[1.0, 2.0]);
        assert_eq!(logits.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_weights_emit_biases() {
        let layer = Affine::new(
            DenseMatrix::zeros(3, 2),
            DenseVector::new(vec![0.5, 1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let head = Affine::new(
            DenseMatrix::zeros(2, 3),
            DenseVector::new(vec![-1.0, 4.0]).unwrap(),
        )
        .unwrap();
        let enc = ToyBaseEncoder::new(vec![layer], head).unwrap();
        let (emb, logits) = base_forward(&enc, &DenseVector::new(vec![7.0, -3.0]).unwrap()).unwrap();
        assert_eq!(emb.as_slice(), &[0.5, 1.0, 2.0]);
        assert_eq!(logits.as_slice(), &[-1.0, 4.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = ToyBaseEncoder::init(&[3, 5, 4], 3, &mut rng).unwrap();
        let x = DenseVector::new(vec![0.4, -0.9, 1.3]).unwrap();
        let mut grads = enc.zeros_like();
        base_loss_grad(&enc, &x, 2, &mut grads).unwrap();
        let analytic = grads.to_flat();
        let base = enc.to_flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                let mut e = enc.clone();
                e.load_flat(&p).unwrap();
                let mut scratch = e.zeros_like();
                base_loss_grad(&e, &x, 2, &mut scratch).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6, "param {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn rejects_bad_chain() {
        assert!(ToyBaseEncoder::new(vec![Affine::zeros(3, 2), Affine::zeros(2, 4)], Affine::zeros(2, 2)).is_err());
        let enc = ToyBaseEncoder::identity(2, 2);
        assert!(base_forward(&enc, &DenseVector::zeros(3)).is_err());
    }
}
