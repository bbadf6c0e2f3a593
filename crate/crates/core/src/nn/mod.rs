//! Minimal dense-network engine.
//!
//! Just enough machinery for the six function heads of the model and the
//! synthetic generator: parameter storage in one flat buffer, forward
//! evaluation, reverse-mode gradients, Adam updates, and a finite-difference
//! gradient checker used as a numerical test oracle.
//!
//! No GPU, no convolutions, no general autodiff graph.

mod activation;
mod adam;
mod gradcheck;
mod mlp;

pub use activation::Activation;
pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_against, GradCheckReport};
pub use mlp::{ForwardTrace, Mlp, MlpBackward};
