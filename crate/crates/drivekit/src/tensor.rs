//! Dense row-major tensors and the error surface shared by the whole
//! differentiable stack.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tape::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("configuration error: {0}")]
    Config(String),
}

/// n-dimensional numeric array, optionally carrying a gradient and a handle
/// into the tape that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub grad: Option<Vec<S>>,
    pub requires_grad: bool,
    pub tape_id: Option<NodeId>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            data.len(),
            "shape {:?} expects {} elements, got {}",
            shape,
            n,
            data.len()
        );
        Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
            tape_id: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![S::ZERO; n])
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![S::ONE; n])
    }

    pub fn scalar(value: S) -> Self {
        Tensor::new(vec![1], vec![value])
    }

    pub fn from_f64_slice(shape: Vec<usize>, data: &[f64]) -> Self {
        Tensor::new(shape, data.iter().map(|&x| S::from_f64(x)).collect())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert element type, dropping gradient and tape linkage.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        )
    }
}

/// Plain array-of-f32 parameter value as stored in checkpoints; shape plus
/// flat row-major data, no autodiff state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamValue {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ParamValue {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        ParamValue {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|&x| S::from_f64(x as f64)).collect(),
        )
    }
}
