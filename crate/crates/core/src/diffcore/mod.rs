//! Minimal reverse-mode differentiable numeric core.
//!
//! Values are dense vectors and matrices of a scalar type `F`. A [`Tape`]
//! records the operations of one forward pass; [`Tape::backward`] replays the
//! record once in reverse topological order and accumulates exact gradients
//! into a [`ParameterStore`]. Training instantiates the code with `f32`;
//! gradient checking runs the identical code with `f64`, where central
//! differences have enough headroom to resolve the analytic gradients.

mod cells;
mod gradcheck;
mod store;
mod tape;

pub use cells::{gru_cell, lstm_cell, GruParams, LstmParams};
pub use gradcheck::{grad_check, GradCheckReport};
pub use store::{Init, ParamId, ParamTensor, ParameterStore};
pub use tape::{softmax_stable, Activation, ElementwiseKind, NodeId, Tape};

use thiserror::Error;

/// Scalar type the numeric core is generic over.
pub trait Real:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: dimension mismatch between {left} and {right}")]
    DimMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range (len {len})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: node id does not belong to this tape")]
    InvalidNode { op: &'static str },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter name {0:?}")]
    UnknownParam(String),
    #[error("backward root must be a scalar, got shape {0}")]
    NonScalarLoss(String),
}

/// Shapes are at most rank 2. Matrices are row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix { rows: usize, cols: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Vector(n) => vec![n],
            Shape::Matrix { rows, cols } => vec![rows, cols],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Option<Shape> {
        match *dims {
            [n] => Some(Shape::Vector(n)),
            [rows, cols] => Some(Shape::Matrix { rows, cols }),
            _ => None,
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix { rows, cols } => write!(f, "[{rows}x{cols}]"),
        }
    }
}

/// Dense value with its shape. The grad buffer of a parameter has the same
/// shape as its value at all times.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Shape,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![F::zero(); shape.len()],
        }
    }

    pub fn ones(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![F::one(); shape.len()],
        }
    }

    pub fn vector(data: Vec<F>) -> Self {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Tensor {
            shape: Shape::Matrix { rows, cols },
            data,
        }
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Self {
        assert_eq!(data.len(), shape.len());
        Tensor {
            shape,
            data: data.iter().map(|&v| F::from_f64(v)).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Row-major element of a matrix.
    pub fn at(&self, row: usize, col: usize) -> F {
        match self.shape {
            Shape::Matrix { cols, .. } => self.data[row * cols + col],
            Shape::Vector(_) => panic!("at() on a vector"),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }
}
