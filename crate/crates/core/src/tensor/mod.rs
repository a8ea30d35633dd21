//! Dense `f64` tensors and a reverse-mode differentiation tape.
//!
//! [`Tensor`] is the owned storage used for parameters and data. A forward
//! pass copies the tensors it needs onto a [`Tape`] as leaves and records
//! every primitive as it runs; [`Tape::backward`] then walks the recording in
//! reverse and returns one gradient buffer per node that received one.
//!
//! ```
//! use adanas::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&Tensor::param(vec![2], vec![1.0, 2.0]));
//! let y = x.mul(&x).unwrap().sum();
//! let grads = tape.backward(&y).unwrap();
//! assert_eq!(grads.get(&x).unwrap(), &[2.0, 4.0]);
//! ```

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::grad_check;
pub use ops::{argmax, BatchNormStats, PoolKind};
pub use tape::{Gradients, Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            bail!(
                Dimension,
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            );
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// A trainable tensor. Panics if `data` does not match `shape`.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let mut t = Self::new(shape, data).expect("parameter shape and data disagree");
        t.requires_grad = true;
        t
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the stored gradient, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            bail!(
                Dimension,
                "gradient of length {} for tensor of length {}",
                g.len(),
                self.data.len()
            );
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Splits the tensor into data and gradient for in-place optimizer updates.
    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], Option<&[f64]>) {
        (&mut self.data, self.grad.as_deref())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
