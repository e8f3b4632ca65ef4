//! Dimension-wise attention with analytic gradients, FLOPs accounting and a
//! small masked / causal language-model training harness.
//!
//! Module map:
//!
//! * [`numerics`]: dense row-major tensors, kernels, seeded RNG, and the
//!   instrumented [`numerics::Counted`] scalar.
//! * [`attention`]: token-wise baseline and dimension-wise encoder attention,
//!   materialized and factored.
//! * [`masked`]: causal dimension-wise attention, naive and streaming.
//! * [`grad`]: per-op reverse-mode rules and the finite-difference oracle.
//! * [`model`]: encoder/decoder blocks, losses, Adam, training, checkpoints.
//! * [`analysis`]: analytic FLOPs and wall-clock scaling sweeps.
//! * [`harness`]: corpus, vocabulary, MLM masking, run configs and the CLI.
//! * [`verify`]: the property suites behind `dimwise verify`.

pub mod analysis;
pub mod attention;
pub mod error;
pub mod grad;
pub mod harness;
pub mod masked;
pub mod model;
pub mod numerics;
pub mod verify;

pub use error::{Error, Result};
