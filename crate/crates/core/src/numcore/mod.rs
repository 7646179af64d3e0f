//! Minimal dense numeric core: tensors, per-op backward rules, losses,
//! SGD with momentum, and finite-difference gradient checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckOptions};
pub use loss::{cross_entropy, cross_entropy_backward, focal_loss, focal_loss_backward};
pub use ops::{affine, affine_backward, relu, relu_backward, softmax, softmax_backward};
pub use optim::{sgd_momentum_step, Parameter, Parameterized};
pub use tensor::Tensor;
