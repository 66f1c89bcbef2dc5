//! Reverse-mode automatic differentiation over NCHW tensors.
//!
//! Every backward rule is written in terms of differentiable [`Var`] operations,
//! so gradients can themselves be differentiated (`grad(.., create_graph = true)`).
//! This is what a gradient-penalty term on a critic needs.

mod error;
mod graph;
pub mod ops;
pub mod optim;
mod tensor;

pub use error::{Error, Result};
pub use graph::{grad, is_grad_enabled, no_grad, Var};
pub use tensor::{numel, Shape, Tensor};
