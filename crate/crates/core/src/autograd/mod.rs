//! Reverse-mode differentiation over [`Tensor`](crate::Tensor)s.
//!
//! A [`Graph`] records each forward op with whatever it needs for the
//! backward pass (pool winners, dropout masks, convolution geometry).
//! [`ops`] wraps single graph ops as plain tensor functions for inference
//! and tests.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
pub mod ops;

pub use gradcheck::{finite_diff_check, finite_diff_check_with, GradCheckOptions, GradCheckReport};
pub use graph::{Activation, Gradients, Graph, PoolMode, Var};
