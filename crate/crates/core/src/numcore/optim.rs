use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
            velocity,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns a fixed, ordered set of parameters.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

/// `v ← m·v + g; w ← w − lr·v`, then clears the gradients. Refuses to touch
/// any parameter if a gradient is non-finite.
pub fn sgd_momentum_step(params: &mut [&mut Parameter], lr: f64, momentum: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFiniteGradient { name: p.name.clone() });
    }
    for p in params.iter_mut() {
        let Parameter {
            value, grad, velocity, ..
        } = &mut **p;
        for ((w, g), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut().iter_mut())
            .zip(velocity.data_mut().iter_mut())
        {
            *v = momentum * *v + *g;
            *w -= lr * *v;
            *g = 0.0;
        }
    }
    Ok(())
}
