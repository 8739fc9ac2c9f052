//! Minimal reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation as it is evaluated. Leaves are either
//! parameters (gradients requested) or constants. [`Graph::backward`] walks
//! the tape in reverse and accumulates gradients into every parameter.
//!
//! Shapes must match exactly; the only implicit broadcast is scalar × tensor
//! through [`Graph::scale`] and [`Graph::add_scalar`]. Everything else goes
//! through explicit shape ops such as [`Graph::tile`] and [`Graph::reshape`].

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{sigmoid, Gradients, Graph, NodeId};
