//! Dense row-major `f64` tensor with an optional gradient buffer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense tensor: a shape and a row-major value buffer, plus an optional
/// gradient buffer of the same length.
///
/// Rank is arbitrary in principle but everything in this crate is rank 1
/// (vectors/biases) or rank 2 (matrices/batches). The gradient is not
/// serialized: checkpoints store values only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from a shape and a row-major value buffer.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(Error::InvalidInput(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expect,
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
            grad: None,
        }
    }

    /// Rank-0-like scalar, stored as shape `[1]`.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            grad: None,
        }
    }

    /// Rank-2 convenience constructor.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Gradient buffer, if one has been attached.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Attaches a gradient buffer. Length must match the value buffer.
    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::InvalidInput(format!(
                "gradient length {} does not match tensor length {}",
                grad.len(),
                self.values.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Drops the gradient buffer (used between optimizer steps).
    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Number of rows when interpreted as a matrix (`[n]` counts as `n x 1`).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[0],
        }
    }

    /// Number of columns when interpreted as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    /// True if every value (and every gradient entry, if present) is finite.
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}
