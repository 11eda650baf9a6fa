//! Locate-and-edit controlled text generation.
//!
//! Text produced by any base generator is edited toward a set of constraints.
//! Each iteration locates the tokens that drive the primary constraint's
//! energy, masks them simultaneously, asks a mask-filler for top-k candidates
//! per slot and reranks the combinations with the weighted energy
//! `E(y) = sum_i w_i * f_i(y)`.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`modeling`]: adapter interfaces (scorer, mask-filler, causal LM) and
//!   deterministic toy implementations.
//! - [`energy`]: energy terms, score-to-energy conversion, batched evaluation.
//! - [`locate`]: gradient-norm and attention saliency, span selection.
//! - [`edit`]: simultaneous masking and candidate generation.
//! - [`rerank`]: exhaustive and slot-restricted beam search plus selection.
//! - [`controller`]: the iterative edit loop and batch runner.
//! - [`training`]: soft-label objective and a small trainer for toy scorers.
//! - [`metrics`]: evaluation metrics.
//! - [`synth`]: seeded synthetic corpora used by tests and demos.

pub mod controller;
pub mod edit;
pub mod energy;
mod error;
pub mod locate;
pub mod math;
pub mod metrics;
pub mod modeling;
pub mod rerank;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
