//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable value. Ops on tensors that track gradients
//! record an edge in a graph owned by the result; [`Tensor::backward`] walks
//! that graph from a scalar loss and returns a [`Gradients`] map.
//! [`Tensor::detach`] produces a value-identical tensor with no upstream
//! edges, which is how gradient-blocking rules are expressed.

pub mod element;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod parallel;
pub mod rng;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use graph::Gradients;
pub use ops::elementwise::LogMode;
pub use ops::norm::BatchStats;
pub use ops::reduce::Reduction;
pub use rng::SeededRng;
pub use tensor::{grad_enabled, no_grad, Tensor};
