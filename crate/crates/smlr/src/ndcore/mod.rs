//! Numerical substrate: dense tensors, fully-connected networks, losses,
//! exact reverse-mode gradients, a central-difference gradient oracle, and
//! SGD steps.
//!
//! Everything here is a pure function of its arguments and deterministic:
//! identical inputs produce bitwise-identical outputs. Any public operation
//! that would produce a NaN/Inf reports an error instead of propagating it.

mod backprop;
mod loss;
mod network;
mod tensor;

pub use backprop::{backward, finite_diff_grad, sgd_step};
pub use loss::{argmax, loss, loss_gradient, LossKind, Targets};
pub use network::{GradientSet, LayerSpec, Network};
pub use tensor::Tensor;
