//! Reverse-mode differentiation over a closed set of primitives, plus the
//! finite-difference machinery used to verify every adjoint.

mod check;
mod tape;

pub use check::{finite_diff_grad, grad_check, relative_error, Differentiable, GradCheckOptions, GradCheckReport, ParamCheck};
pub use tape::{Gradients, OpKind, Tape, Var};
pub(crate) use tape::sigmoid as tape_sigmoid;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    name: String,
    value: DenseTensor,
    grad: DenseTensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: DenseTensor) -> Self {
        let grad = DenseTensor::zeros(value.shape().clone());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &DenseTensor {
        &self.value
    }

    pub fn grad(&self) -> &DenseTensor {
        &self.grad
    }

    /// Mutable view of the values; the shape cannot change through it.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.value.data_mut()
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        self.grad.data_mut()
    }

    /// Splits the borrow so optimizers can read the gradient while writing values.
    pub fn value_and_grad_mut(&mut self) -> (&mut [f64], &[f64]) {
        (self.value.data_mut(), self.grad.data())
    }

    pub fn set_value(&mut self, value: DenseTensor) -> Result<()> {
        self.value.expect_same_shape(&value).map_err(|e| {
            Error::Shape(format!("parameter {}: {e}", self.name))
        })?;
        self.value = value;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate_grad(&mut self, g: &DenseTensor) -> Result<()> {
        self.grad
            .add_assign(g)
            .map_err(|e| Error::Shape(format!("gradient for {}: {e}", self.name)))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns trainable parameters. Names must be unique within one object.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Parameter>;

    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// Total number of trainable scalars.
    fn scalar_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.parameters().into_iter().find(|p| p.name() == name)
    }

    fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.parameters_mut().into_iter().find(|p| p.name() == name)
    }
}
