use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: DenseMatrix,
    pub bias: DenseVector,
}

impl Affine {
    pub fn new(weight: DenseMatrix, bias: DenseVector) -> Result<Self> {
        if weight.rows() != bias.dim() {
            return Err(Error::DimensionMismatch {
                expected: weight.rows(),
                found: bias.dim(),
            });
        }
        Ok(Affine { weight, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            weight: DenseMatrix::zeros(out_dim, in_dim),
            bias: DenseVector::zeros(out_dim),
        }
    }

    /// Weights uniform in `[-scale, scale]`, every bias entry set to `bias`.
    pub fn init_uniform<R: Rng + ?Sized>(
        out_dim: usize,
        in_dim: usize,
        scale: f64,
        bias: f64,
        rng: &mut R,
    ) -> Self {
        let mut layer = Affine::zeros(out_dim, in_dim);
        for w in layer.weight.data_mut() {
            *w = rng.gen_range(-scale..=scale);
        }
        layer.bias.as_mut_slice().fill(bias);
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.dim()
    }

    pub fn zeros_like(&self) -> Self {
        Affine::zeros(self.out_dim(), self.in_dim())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (yi, bi) in y.iter_mut().zip(self.bias.as_slice()) {
            *yi += bi;
        }
        y
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut Affine) -> Vec<f64> {
        let in_dim = self.in_dim();
        let gw = grads.weight.data_mut();
        for (r, g) in grad_out.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            for (w, xi) in gw[r * in_dim..(r + 1) * in_dim].iter_mut().zip(x) {
                *w += g * xi;
            }
        }
        for (b, g) in grads.bias.as_mut_slice().iter_mut().zip(grad_out) {
            *b += g;
        }
        self.weight.matvec_transposed(grad_out)
    }

    pub(crate) fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.weight.data());
        f(self.bias.as_slice());
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.weight.data_mut());
        f(self.bias.as_mut_slice());
    }
}

pub(crate) fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Zeroes gradient entries whose pre-activation was not positive.
pub(crate) fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, p) in grad.iter_mut().zip(pre) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}
