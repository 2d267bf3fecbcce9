//! Masked autoregressive flow over style vectors.
//!
//! Each block maps `x -> z` with `z_i = (x_i - mu_i(x_<i)) * exp(-alpha_i(x_<i))`
//! and contributes `-sum_i alpha_i` to the log-determinant. The raw
//! conditioner output is squashed as `alpha = 7 tanh(raw / 7)` so every
//! scale factor stays inside `[e^-7, e^7]`. Dimensions are reversed before
//! every block except the first. Inputs are first standardized per
//! dimension with fixed statistics of the training set.

mod model;
mod train;

pub use model::{FlowConfig, FlowModel, ALPHA_BOUND};
pub use train::{train_flow, FlowReport, FlowTraining};
