//! Learnable Householder flow.
//!
//! The reflector for step `t` is produced by an affine map of the previous
//! reflector (`v_1` comes from the encoder hidden state), so each input gets
//! its own chain of reflections. Every step is a reflection, hence the flow is
//! volume preserving and its log-determinant is identically zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affine::Affine;
use crate::error::{Error, Result};
use crate::linalg::{reflect_in_place, DenseVector, NORM_FLOOR};

/// A reflector map `v_t = act(W v_{t-1} + b)`; always square.
pub type HouseholderLayer = Affine;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReflectorActivation {
    #[default]
    None,
    Tanh,
}

impl ReflectorActivation {
    fn apply(self, x: &mut [f64]) {
        if self == ReflectorActivation::Tanh {
            x.iter_mut().for_each(|v| *v = v.tanh());
        }
    }

    /// Multiplies `grad` by the activation derivative, given the activation output.
    fn backward(self, out: &[f64], grad: &mut [f64]) {
        if self == ReflectorActivation::Tanh {
            for (g, y) in grad.iter_mut().zip(out) {
                *g *= 1.0 - y * y;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStack {
    first_map: Option<Affine>,
    layers: Vec<HouseholderLayer>,
    activation: ReflectorActivation,
}

impl FlowStack {
    /// The empty flow: `z^(T) = z^(0)`.
    pub fn identity() -> Self {
        FlowStack {
            first_map: None,
            layers: Vec::new(),
            activation: ReflectorActivation::None,
        }
    }

    pub fn new(
        first_map: Option<Affine>,
        layers: Vec<HouseholderLayer>,
        activation: ReflectorActivation,
    ) -> Result<Self> {
        match &first_map {
            None if !layers.is_empty() => {
                return Err(Error::Shape(
                    "reflector layers require a first map from the hidden state".into(),
                ))
            }
            Some(first) => {
                let m = first.out_dim();
                if let Some(bad) = layers.iter().find(|l| l.in_dim() != m || l.out_dim() != m) {
                    return Err(Error::Shape(format!(
                        "reflector layer is {}x{}, flow dimension is {m}",
                        bad.out_dim(),
                        bad.in_dim()
                    )));
                }
            }
            None => {}
        }
        Ok(FlowStack {
            first_map,
            layers,
            activation,
        })
    }

    /// Random flow of length `length` over latent dim `latent_dim`.
    ///
    /// Weights are uniform in `±1/sqrt(M)`, biases start at 0.01 so the
    /// first reflectors stay clear of the norm floor.
    pub fn init<R: Rng + ?Sized>(
        length: usize,
        hidden_dim: usize,
        latent_dim: usize,
        activation: ReflectorActivation,
        rng: &mut R,
    ) -> Self {
        if length == 0 {
            return FlowStack {
                activation,
                ..FlowStack::identity()
            };
        }
        let scale = 1.0 / (latent_dim as f64).sqrt();
        let first = Affine::init_uniform(latent_dim, hidden_dim, scale, 0.01, rng);
        let layers = (1..length)
            .map(|_| Affine::init_uniform(latent_dim, latent_dim, scale, 0.01, rng))
            .collect();
        FlowStack {
            first_map: Some(first),
            layers,
            activation,
        }
    }

    /// Number of reflections `T`.
    pub fn length(&self) -> usize {
        match self.first_map {
            Some(_) => 1 + self.layers.len(),
            None => 0,
        }
    }

    pub fn activation(&self) -> ReflectorActivation {
        self.activation
    }

    pub fn first_map(&self) -> Option<&Affine> {
        self.first_map.as_ref()
    }

    pub fn first_map_mut(&mut self) -> Option<&mut Affine> {
        self.first_map.as_mut()
    }

    pub fn layers(&self) -> &[HouseholderLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [HouseholderLayer] {
        &mut self.layers
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.first_map.as_ref().map(Affine::out_dim)
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        self.first_map.as_ref().map(Affine::in_dim)
    }

    pub fn zeros_like(&self) -> Self {
        FlowStack {
            first_map: self.first_map.as_ref().map(Affine::zeros_like),
            layers: self.layers.iter().map(Affine::zeros_like).collect(),
            activation: self.activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.first_map.as_ref().map_or(0, Affine::param_count)
            + self.layers.iter().map(Affine::param_count).sum::<usize>()
    }

    /// Calls `f` on each parameter block in declaration order.
    pub fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        if let Some(first) = &self.first_map {
            first.visit(f);
        }
        for layer in &self.layers {
            layer.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        if let Some(first) = &mut self.first_map {
            first.visit_mut(f);
        }
        for layer in &mut self.layers {
            layer.visit_mut(f);
        }
    }

    fn map(&self, t: usize) -> &Affine {
        if t == 0 {
            self.first_map.as_ref().expect("flow of nonzero length")
        } else {
            &self.layers[t - 1]
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    /// `z^(0) ... z^(T)`.
    pub z_path: Vec<DenseVector>,
    /// `v_1 ... v_T`.
    pub v_path: Vec<DenseVector>,
    /// Conditioning input of the first reflector map.
    pub h: DenseVector,
    /// Steps whose reflector fell below the floor and were skipped
    /// (only ever non-empty for lenient forwards).
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowGradients {
    pub grad_z0: DenseVector,
    pub params: FlowStack,
    pub grad_h: DenseVector,
}

/// Runs `z^(0) -> z^(T)`. Returns the output, the trace needed by
/// [`flow_backward`], and the log-Jacobian-determinant, which is exactly 0.
pub fn flow_forward(
    stack: &FlowStack,
    z0: &DenseVector,
    h: &DenseVector,
) -> Result<(DenseVector, FlowTrace, f64)> {
    forward_impl(stack, z0, h, true)
}

/// Like [`flow_forward`], but a reflector at or below the norm floor acts as
/// the identity instead of failing. Used for prediction only.
pub fn flow_forward_lenient(
    stack: &FlowStack,
    z0: &DenseVector,
    h: &DenseVector,
) -> Result<(DenseVector, FlowTrace, f64)> {
    forward_impl(stack, z0, h, false)
}

fn forward_impl(
    stack: &FlowStack,
    z0: &DenseVector,
    h: &DenseVector,
    strict: bool,
) -> Result<(DenseVector, FlowTrace, f64)> {
    let length = stack.length();
    if let Some(first) = stack.first_map() {
        if z0.dim() != first.out_dim() {
            return Err(Error::DimensionMismatch {
                expected: first.out_dim(),
                found: z0.dim(),
            });
        }
        if h.dim() != first.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: first.in_dim(),
                found: h.dim(),
            });
        }
    }
    let mut z_path = Vec::with_capacity(length + 1);
    let mut v_path = Vec::with_capacity(length);
    let mut skipped = Vec::new();
    z_path.push(z0.clone());
    let mut z = z0.as_slice().to_vec();
    for t in 0..length {
        let input = if t == 0 {
            h.as_slice()
        } else {
            v_path.last().map(DenseVector::as_slice).unwrap()
        };
        let mut v = stack.map(t).forward(input);
        stack.activation.apply(&mut v);
        let norm_sq: f64 = v.iter().map(|x| x * x).sum();
        if !norm_sq.is_finite() {
            return Err(Error::NonFinite { index: t });
        }
        if norm_sq.sqrt() > NORM_FLOOR {
            reflect_in_place(&v, norm_sq, &mut z);
        } else if strict {
            return Err(Error::DegenerateReflector {
                norm: norm_sq.sqrt(),
                floor: NORM_FLOOR,
            });
        } else {
            skipped.push(t);
        }
        v_path.push(DenseVector::from_raw(v));
        z_path.push(DenseVector::from_raw(z.clone()));
    }
    let trace = FlowTrace {
        z_path,
        v_path,
        h: h.clone(),
        skipped,
    };
    Ok((DenseVector::from_raw(z), trace, 0.0))
}

/// Reverse pass through the reflection chain.
///
/// For `z' = z - (2 p / s) v` with `p = v.z`, `s = v.v` and upstream gradient
/// `g`, the Jacobian in `z` is the (symmetric) reflection itself, and
/// `dL/dv = -2 [ (g.v / s) z + (p / s) g - 2 p (g.v) / s^2 v ]`.
pub fn flow_backward(
    stack: &FlowStack,
    trace: &FlowTrace,
    grad_z_t: &DenseVector,
) -> Result<FlowGradients> {
    let length = stack.length();
    if trace.z_path.len() != length + 1 || trace.v_path.len() != length {
        return Err(Error::TraceMismatch(format!(
            "flow length {length}, trace has {} states and {} reflectors",
            trace.z_path.len(),
            trace.v_path.len()
        )));
    }
    let dim = trace.z_path[0].dim();
    if grad_z_t.dim() != dim
        || trace.z_path.iter().any(|z| z.dim() != dim)
        || trace.v_path.iter().any(|v| v.dim() != dim)
    {
        return Err(Error::TraceMismatch("inconsistent vector dimensions".into()));
    }
    if let Some(first) = stack.first_map() {
        if first.out_dim() != dim || first.in_dim() != trace.h.dim() {
            return Err(Error::TraceMismatch(
                "trace dimensions disagree with the flow parameters".into(),
            ));
        }
    }

    let mut params = stack.zeros_like();
    let mut gz = grad_z_t.as_slice().to_vec();
    let mut grad_h = vec![0.0; trace.h.dim()];
    let mut gv_downstream: Option<Vec<f64>> = None;
    for t in (0..length).rev() {
        let v = trace.v_path[t].as_slice();
        let z_prev = trace.z_path[t].as_slice();
        let mut gv = gv_downstream.take().unwrap_or_else(|| vec![0.0; dim]);
        if !trace.skipped.contains(&t) {
            let s: f64 = v.iter().map(|x| x * x).sum();
            let p: f64 = v.iter().zip(z_prev).map(|(a, b)| a * b).sum();
            let gdotv: f64 = v.iter().zip(&gz).map(|(a, b)| a * b).sum();
            for i in 0..dim {
                gv[i] += -2.0
                    * (gdotv / s * z_prev[i] + p / s * gz[i] - 2.0 * p * gdotv / (s * s) * v[i]);
            }
            reflect_in_place(v, s, &mut gz);
        }
        stack.activation.backward(v, &mut gv);
        let (input, grads) = if t == 0 {
            (trace.h.as_slice(), params.first_map.as_mut().unwrap())
        } else {
            (trace.v_path[t - 1].as_slice(), &mut params.layers[t - 1])
        };
        let g_input = stack.map(t).backward(input, &gv, grads);
        if t == 0 {
            grad_h = g_input;
        } else {
            gv_downstream = Some(g_input);
        }
    }
    Ok(FlowGradients {
        grad_z0: DenseVector::from_raw(gz),
        params,
        grad_h: DenseVector::from_raw(grad_h),
    })
}
