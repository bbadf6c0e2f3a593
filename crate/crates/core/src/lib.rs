//! Intact-VAE: treatment-effect estimation under unobserved confounding.
//!
//! This crate implements an identifiable treatment-conditional variational
//! autoencoder for estimating conditional and average treatment effects
//! (CATE/ATE) when the confounder is not observed, together with the
//! synthetic and semi-synthetic benchmarks, estimators, metrics, and
//! diagnostics used to evaluate it.
//!
//! The pieces, bottom up:
//!
//! - [`nn`] — a minimal dense-network engine: [`nn::Mlp`] forward/backward,
//!   [`nn::AdamState`] updates, and a finite-difference [`nn::grad_check`].
//! - [`gauss`] — the diagonal-Gaussian kernel ([`gauss::DiagGaussian`]):
//!   log-density, closed-form KL, reparameterized sampling.
//! - [`quad`] — Gauss-Hermite quadrature for Gaussian expectations, used by
//!   the ground-truth oracles and the deterministic ELBO evaluator.
//! - [`model`] — the VAE itself ([`model::IntactVae`]): decoder p(y|z,t),
//!   conditional prior p(z|x) or p(z|x,t), encoder q(z|x,y,t), the ELBO with
//!   gradients for all six networks, and the affine latent reparameterization
//!   that realizes the model's equivalence class.
//! - [`dataset`] / [`synth`] / [`semisynth`] — causal datasets with full
//!   ground truth, the seeded synthetic generator with three causal settings,
//!   and the IHDP-style response-surface synthesizer.
//! - [`estimate`] — post-treatment (encoder) and pre-treatment (prior)
//!   outcome predictors, the ATE / sqrt-PEHE metrics, latent-recovery
//!   diagnostics, and a naive regression baseline.
//! - [`train`] / [`sweep`] — mini-batch Adam ascent on the ELBO with
//!   validation early stopping, and the many-random-models sweep protocol.
//! - [`selftest`] — the oracle suite behind the `selftest` CLI command.
//!
//! Everything is seeded and deterministic: equal configuration and seeds give
//! byte-identical outputs on the same build. See [`rng`] for the stream
//! splitting rule.

pub mod dataset;
pub mod error;
pub mod estimate;
pub mod gauss;
pub mod model;
pub mod nn;
pub mod quad;
pub mod rng;
pub mod selftest;
pub mod semisynth;
pub mod sweep;
pub mod synth;
pub mod train;

pub use dataset::{CausalDataset, Split};
pub use error::{Error, Result};
pub use estimate::EvalReport;
pub use gauss::DiagGaussian;
pub use model::{ElboTerms, IntactVae, ModelConfig};
pub use nn::{Activation, AdamConfig, AdamState, Mlp};
pub use synth::{CausalSetting, OutcomeKind, SynthSpec};
pub use train::{TrainConfig, TrainedModel};
