//! Reverse-mode differentiation engine and scalar kernels.

pub mod functions;
mod grad_check;
mod graph;
mod ops;
mod tensor;

pub use functions::{batchnorm_scalar, hinge, hinge_grad, mish, mish_grad, sigmoid, softplus};
pub use grad_check::{grad_check, relative_error, REL_FLOOR};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
