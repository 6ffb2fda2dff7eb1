//! Minimal reverse-mode differentiable numeric core.
//!
//! [`Tensor`] holds values, [`Graph`] records operations and replays exact
//! analytic gradients, and [`grad_check`] compares any recorded gradient
//! against central finite differences.

mod check;
mod graph;
mod tensor;

pub use check::{adaptive_fd_rel_err, fd_gradient, grad_check, max_rel_err, rel_err, DEFAULT_FD_EPS};
pub use graph::{stable_softmax_row, Graph, GraphError, Mode, NodeId, Result};
pub use tensor::{dot, mm_nn, mm_nt, mm_tn, Tensor};

#[cfg(test)]
mod tests;
