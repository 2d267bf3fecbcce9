//! Dense arrays and a define-by-run reverse-mode differentiation tape.
//!
//! [`Tensor`] is a plain row-major value. Differentiable computation happens
//! on a [`Tape`]: leaves are registered with [`Tape::param`] (gradient
//! wanted) or [`Tape::constant`], operations on [`Var`] handles append nodes,
//! and [`Tape::backward`] walks the nodes in strictly decreasing creation
//! order, summing gradients over every consumer of a node.
//!
//! There is no implicit broadcasting: operand shapes must match exactly and
//! replication is spelled out with [`Var::gather`] or the `repeat_*` helpers.
//!
//! Conventions at non-differentiable points: `abs` uses subgradient 0 at 0,
//! `leaky_relu` uses the negative-side slope at 0, `sqrt`/`l2_norm` use 0 at 0.

mod conv;
mod gradcheck;
mod tape;
mod value;

pub use conv::{conv1d, reflect_index, Axis};
pub use gradcheck::{grad_check, jacobian, GradCheckReport};
pub use tape::{Tape, Var};
pub use value::Tensor;
