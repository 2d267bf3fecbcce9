//! Regularized latent search (RLS) and l1-ball-constrained generator
//! refinement (RLS+) for image super-resolution with a style-based
//! generator prior.
//!
//! The crate carries everything the method needs at desk scale: a small
//! reverse-mode differentiation tape, dense and masked layers, a toy
//! style-based generator, a masked autoregressive flow over the style
//! distribution, the degradation operators, the composite latent prior,
//! Adam and l1-ball projected gradient descent, the two-stage solver with
//! its ablations, metrics, and the experiment harness used by the `gprl`
//! command line tool.

pub mod degrade;
pub mod error;
pub mod eval;
pub mod flow;
pub mod generator;
pub mod harness;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod parallel;
pub mod seed;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use parallel::Execution;
pub use tensor::{Tape, Tensor, Var};
