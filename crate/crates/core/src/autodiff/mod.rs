//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records forward operations into a flat arena of nodes; a
//! single [`Tape::backward`] pass walks the arena in reverse and accumulates
//! gradients. The set of operations is exactly what the toy models need
//! (dense layers, tanh/relu, layer norm, embedding lookup, a fused
//! softmax + cross-entropy loss) — this is not a general tensor library.
//!
//! Everything is `f64`. The noise scales this crate works with live around
//! `1e-6`..`1e-12`, which is uncomfortably close to `f32` resolution, so
//! single precision is deliberately not offered.

mod tape;
mod tensor;

pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
