//! Dense `f64` tensors with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every step: ops append nodes, and
//! [`Graph::backward`] walks them in reverse, accumulating parameter
//! gradients into a [`Grads`] buffer aligned with the [`ParamStore`] the
//! graph reads from. Parameters are never copied into the graph.

use thiserror::Error;

mod adam;
mod graph;
pub mod gradcheck;
mod params;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Var};
pub use params::{Grads, ParamId, ParamStore};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: incompatible shapes {a:?} and {b:?}")]
    Shape { op: &'static str, a: Vec<usize>, b: Vec<usize> },
    #[error("{op}: {message}")]
    Invalid { op: &'static str, message: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::Shape { op: "tensor", a: shape, b: vec![data.len()] });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: Vec::new(), data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
