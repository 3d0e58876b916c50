//! Householder-flow variational adapter for few-shot classification of
//! embedding vectors.
//!
//! The adapter encodes an embedding into a diagonal Gaussian, draws a
//! reparameterized sample, pushes it through a chain of input-conditioned
//! Householder reflections and classifies the result. Because reflections are
//! orthogonal the flow is volume preserving: its log-determinant is zero and
//! the base Gaussian turns into one with a full covariance.

pub mod affine;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod par;
pub mod posterior;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
