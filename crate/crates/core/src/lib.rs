//! Sensitivity-aware noisy fine-tuning at desk scale.
//!
//! This crate implements the PATS update rule — an Adamax-style optimizer
//! that adds zero-mean Gaussian perturbations to parameters, with the noise
//! variance scaled *inversely* to an exponential moving average of each
//! parameter's sensitivity `|theta * grad(theta)|` — together with three
//! baselines (plain Adamax, a NoisyTune-style uniform pre-perturbation, and
//! a SAGE-style sensitivity-scaled learning rate), a small reverse-mode
//! autodiff tape, toy models (MLP and a tiny transformer encoder), synthetic
//! pretrain/fine-tune task generators with a controllable distribution
//! shift, and an experiment harness that reproduces the qualitative
//! sensitivity-distribution and low-resource effects at toy scale.
//!
//! Everything is `f64` and deterministic: all randomness flows through
//! counter-based substreams derived from a single master seed, so runs are
//! reproducible bit-for-bit and disabling noise (`base_noise = 0`) is
//! *exactly* plain Adamax, not merely approximately.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod models;
pub mod optim;
pub mod rng;
pub mod sensitivity;
pub mod tasks;

pub use error::{Error, Result};
