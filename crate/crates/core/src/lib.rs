//! Selective recurrent attention with data-dependent decay for
//! irregularly-sampled event sequences.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: matrices, nonlinearities, a reverse-mode tape and a
//!   finite-difference oracle.
//! - [`positional`]: rotary embedding driven by real-valued timestamps.
//! - [`sra`]: the decay gate, recurrent and parallel attention forms and the
//!   causal decay matrix.
//! - [`odebridge`]: zero-order-hold lifting/discretisation and continuous-gap
//!   state evolution.
//! - [`model`]: the decoder stack, loss, optimiser and checkpoints.
//! - [`datagen`]: a synthetic latent-Markov cohort generator with an exact
//!   Bayes predictor.
//! - [`inference`]: forecasting, recall, risk trajectories and pooled
//!   sequence embeddings.
//! - [`bench`]: wall-time scaling harness.

pub mod bench;
pub mod datagen;
mod error;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod odebridge;
pub mod positional;
pub mod sra;

pub use error::{Error, Result};
pub use numerics::{Matrix, Precision, Scalar};
